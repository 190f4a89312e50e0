fn main() {
    let profile = std::env::var("PROFILE").unwrap_or_default();
    let target = std::env::var("TARGET").unwrap_or_default();
    println!("cargo:rustc-env=LLGS_BUILD_PROFILE={profile}");
    println!("cargo:rustc-env=LLGS_BUILD_TARGET={target}");
}
