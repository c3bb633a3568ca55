fn main() {
    std::process::exit(curriculum_core::experiments::run_cli(std::env::args_os()));
}
