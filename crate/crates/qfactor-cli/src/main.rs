fn main() {
    if let Err(e) = qfactor_cli::run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
