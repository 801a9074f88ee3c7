fn main() {
    std::process::exit(attn_gan::cli::run(std::env::args_os()));
}
