fn main() {
    std::process::exit(shadowtail_cli::dispatch(std::env::args_os()));
}
