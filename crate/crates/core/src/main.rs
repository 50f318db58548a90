fn main() {
    std::process::exit(attn_tree::cli::run(std::env::args_os()));
}
