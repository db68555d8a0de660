fn main() {
    let code = ets_causal_cli::run(std::env::args_os());
    std::process::exit(code);
}
