fn main() {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let code = stlm_cli::run(std::env::args_os(), &mut out, &mut std::io::stderr());
    drop(out);
    std::process::exit(code);
}
