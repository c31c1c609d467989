fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR");
    let out_path = std::path::Path::new(&crate_dir).join("include").join("lattice_gates.h");

    let config = cbindgen::Config {
        language: cbindgen::Language::C,
        header: Some("/* C interface for the lattice-gates waveform synthesis library. */".into()),
        include_guard: Some("LATTICE_GATES_H".into()),
        cpp_compat: true,
        documentation: true,
        ..Default::default()
    };

    cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
        .expect("cbindgen failed to generate the C header")
        .write_to_file(out_path);

    println!("cargo:rerun-if-changed=src/lib.rs");
}
