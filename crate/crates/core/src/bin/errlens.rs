fn main() {
    let code = errlens::cli::run(std::env::args_os());
    std::process::exit(code);
}
