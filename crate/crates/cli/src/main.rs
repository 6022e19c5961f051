fn main() {
    std::process::exit(graphsent_cli::main_with(std::env::args_os()));
}
