fn main() {
    std::process::exit(obspanel_cli::run(std::env::args_os()));
}
