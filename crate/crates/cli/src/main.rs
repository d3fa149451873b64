use std::process::ExitCode;

use clap::Parser;
use satl_cli::{run, Cli, Status};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => Status::Ok.into(),
        Err(err) => {
            // Core errors already embed their cause in the message.
            let mut msg = err.to_string();
            for cause in err.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            Status::of(&err).into()
        }
    }
}
