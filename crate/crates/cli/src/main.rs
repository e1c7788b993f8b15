use cameo_core::executor::TrackingAlloc;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

#[global_allocator]
static ALLOC: TrackingAlloc = TrackingAlloc;

fn main() {
    let cancel = Arc::new(AtomicBool::new(false));
    let flag = cancel.clone();
    // A second interrupt exits immediately.
    let _ = ctrlc::set_handler(move || {
        if flag.swap(true, Ordering::SeqCst) {
            std::process::exit(130);
        }
        eprintln!("interrupt: finishing running tasks, then stopping");
    });
    let argv: Vec<String> = std::env::args().collect();
    let code = cameo_cli::run_cli(&argv, &mut std::io::stdout(), &mut std::io::stderr(), Some(cancel));
    std::process::exit(code);
}
