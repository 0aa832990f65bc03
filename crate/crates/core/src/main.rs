fn main() {
    std::process::exit(perturb_lab::cli::main_with(std::env::args_os()));
}
