fn main() {
    let code = sdnctl::run(
        std::env::args_os(),
        std::env::var(sdnctl::SEED_ENV).ok(),
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    );
    std::process::exit(code);
}
