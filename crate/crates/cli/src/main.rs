fn main() {
    std::process::exit(pgsynth_cli::run(std::env::args_os()));
}
