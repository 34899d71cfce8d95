use clap::Parser;

fn main() {
    let cli = mfload::cli::Cli::parse();
    match mfload::cli::execute(cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
