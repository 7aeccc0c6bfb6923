//! Worker process driven by the debugger backend over stdin/stdout frames.

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    #[cfg(target_os = "linux")]
    std::process::exit(hrmlab_core::workloads::serve::worker_main(&args));
    #[cfg(not(target_os = "linux"))]
    {
        let _ = args;
        eprintln!("hrmlab-worker requires Linux");
        std::process::exit(1);
    }
}
