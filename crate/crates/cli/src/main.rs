use clap::Parser;

fn main() -> std::process::ExitCode {
    match log2ns_cli::run(log2ns_cli::Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
