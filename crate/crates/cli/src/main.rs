fn main() {
    std::process::exit(ctxpipe::cli::run(std::env::args_os()));
}
