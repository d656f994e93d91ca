use std::process::ExitCode;

use clap::Parser;

// Attention over full-length profiles allocates tensors of tens of megabytes
// per batch; the system allocator maps and unmaps each one.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() -> ExitCode {
    let cli = mpcd_cli::Cli::parse();
    match mpcd_cli::run(cli) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
