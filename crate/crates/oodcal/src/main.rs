fn main() {
    if let Err(e) = oodcal::cli::run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
