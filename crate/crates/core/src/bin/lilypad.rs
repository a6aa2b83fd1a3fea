use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

fn main() {
    let cancel = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&cancel);
    // a second Ctrl-C falls through to the default handler only if this fails
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::Relaxed)) {
        eprintln!("warning: cannot install the Ctrl-C handler: {e}");
    }
    std::process::exit(lilypad_core::cli::run(std::env::args_os(), cancel));
}
