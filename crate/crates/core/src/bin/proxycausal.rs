fn main() {
    std::process::exit(proxy_causal::cli::main());
}
