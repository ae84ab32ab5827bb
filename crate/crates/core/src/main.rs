fn main() {
    std::process::exit(scenario_forge::cli::run(std::env::args_os()));
}
