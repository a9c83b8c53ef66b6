use std::sync::atomic::Ordering;

use greenview_cli::INTERRUPTED;

fn main() {
    if let Err(e) = ctrlc::set_handler(|| {
        if INTERRUPTED.swap(true, Ordering::SeqCst) {
            // second interrupt: give up immediately
            std::process::exit(130);
        }
        eprintln!("interrupt received; stopping after in-flight work");
    }) {
        eprintln!("warning: cannot install interrupt handler: {e}");
    }
    std::process::exit(greenview_cli::run(std::env::args_os()));
}
