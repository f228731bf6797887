fn main() {
    std::process::exit(icl_seg::cli::run(std::env::args_os()));
}
