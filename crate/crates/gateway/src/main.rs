fn main() {
    std::process::exit(agile_gateway::cli::run(std::env::args_os()));
}
