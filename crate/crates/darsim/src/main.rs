fn main() {
    std::process::exit(darsim::run_command(std::env::args_os()));
}
