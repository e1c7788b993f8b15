//! Resource measurement for running tasks.
//!
//! Builtins run on a worker thread, so their CPU time comes from the thread
//! CPU clock and their memory from a per-thread heap account kept by
//! [`TrackingAlloc`]. Commands are separate processes and are measured
//! through `/proc` while running and `wait4` usage when they exit.

use crossbeam_channel::{bounded, RecvTimeoutError, Sender};
use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::sync::atomic::{AtomicBool, AtomicI64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

pub const SAMPLE_INTERVAL: Duration = Duration::from_millis(250);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResourceSample {
    /// Milliseconds since the task started.
    pub t_ms: u64,
    /// CPU use since the previous sample, in cores.
    pub cpu_fraction: Option<f64>,
    pub resident_bytes: Option<u64>,
}

/// Something that can report cumulative CPU seconds and current memory of
/// one running task.
pub trait StatsSource: Send {
    fn cpu_seconds(&mut self) -> Option<f64>;
    fn resident_bytes(&mut self) -> Option<u64>;
}

/// A source with nothing to report.
pub struct Unavailable;

impl StatsSource for Unavailable {
    fn cpu_seconds(&mut self) -> Option<f64> {
        None
    }
    fn resident_bytes(&mut self) -> Option<u64> {
        None
    }
}

pub struct ResourceSampler {
    stop: Sender<()>,
    handle: JoinHandle<Vec<ResourceSample>>,
}

/// Starts sampling `source` every `interval` until [`ResourceSampler::finish`].
pub fn sample_resources(mut source: Box<dyn StatsSource>, interval: Duration) -> ResourceSampler {
    let (stop, rx) = bounded::<()>(1);
    let handle = std::thread::spawn(move || {
        let t0 = Instant::now();
        let mut samples = Vec::new();
        let mut last = (0.0f64, source.cpu_seconds());
        loop {
            let stopping = match rx.recv_timeout(interval) {
                Err(RecvTimeoutError::Timeout) => false,
                _ => true,
            };
            let t = t0.elapsed().as_secs_f64();
            let cpu = source.cpu_seconds();
            let cpu_fraction = match (cpu, last.1) {
                (Some(now), Some(before)) if t > last.0 => Some(((now - before) / (t - last.0)).max(0.0)),
                _ => None,
            };
            samples.push(ResourceSample { t_ms: (t * 1000.0) as u64, cpu_fraction, resident_bytes: source.resident_bytes() });
            last = (t, cpu);
            if stopping {
                return samples;
            }
        }
    });
    ResourceSampler { stop, handle }
}

impl ResourceSampler {
    pub fn finish(self) -> Vec<ResourceSample> {
        let _ = self.stop.send(());
        self.handle.join().unwrap_or_default()
    }
}

pub fn peak_resident(samples: &[ResourceSample]) -> Option<u64> {
    samples.iter().filter_map(|s| s.resident_bytes).max()
}

// --- heap accounting -------------------------------------------------------------

static INSTALLED: AtomicBool = AtomicBool::new(false);

thread_local! {
    static ACCOUNT: Cell<*const Account> = const { Cell::new(std::ptr::null()) };
}

/// Net heap bytes allocated by the threads charged to this account.
#[derive(Debug, Default)]
pub struct Account {
    current: AtomicI64,
    peak: AtomicI64,
}

impl Account {
    pub fn current(&self) -> u64 {
        self.current.load(Ordering::Relaxed).max(0) as u64
    }

    pub fn peak(&self) -> u64 {
        self.peak.load(Ordering::Relaxed).max(0) as u64
    }
}

/// Global allocator that charges allocations to the calling thread's
/// [`Account`], if any. Binaries opt in with `#[global_allocator]`.
pub struct TrackingAlloc;

#[inline]
fn charge(delta: i64) {
    let _ = ACCOUNT.try_with(|a| {
        let p = a.get();
        if !p.is_null() {
            // SAFETY: the pointer is set only while `charged_to` holds the Arc.
            let acc = unsafe { &*p };
            let now = acc.current.fetch_add(delta, Ordering::Relaxed) + delta;
            acc.peak.fetch_max(now, Ordering::Relaxed);
        }
    });
}

unsafe impl GlobalAlloc for TrackingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        if !INSTALLED.load(Ordering::Relaxed) {
            INSTALLED.store(true, Ordering::Relaxed);
        }
        let p = System.alloc(layout);
        if !p.is_null() {
            charge(layout.size() as i64);
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            charge(layout.size() as i64);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        charge(-(layout.size() as i64));
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            charge(new_size as i64 - layout.size() as i64);
        }
        p
    }
}

/// True when [`TrackingAlloc`] is the process's global allocator.
pub fn tracking_installed() -> bool {
    INSTALLED.load(Ordering::Relaxed)
}

/// Runs `f` with the current thread's allocations charged to `account`.
pub fn charged_to<R>(account: &Arc<Account>, f: impl FnOnce() -> R) -> R {
    struct Restore(*const Account);
    impl Drop for Restore {
        fn drop(&mut self) {
            let _ = ACCOUNT.try_with(|a| a.set(self.0));
        }
    }
    let _restore = Restore(ACCOUNT.with(|a| a.replace(Arc::as_ptr(account))));
    f()
}

// --- CPU clocks and /proc ----------------------------------------------------------

/// CPU seconds consumed by the calling thread.
pub fn thread_cpu_seconds() -> Option<f64> {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: valid out-pointer.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    (rc == 0).then(|| ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9)
}

pub fn current_tid() -> i64 {
    // SAFETY: no arguments, cannot fail.
    unsafe { libc::syscall(libc::SYS_gettid) }
}

fn clock_ticks() -> f64 {
    // SAFETY: sysconf has no memory effects.
    let t = unsafe { libc::sysconf(libc::_SC_CLK_TCK) };
    if t > 0 {
        t as f64
    } else {
        100.0
    }
}

/// utime + stime from a `/proc/.../stat` line, in seconds.
fn stat_cpu_seconds(path: &str) -> Option<f64> {
    let text = std::fs::read_to_string(path).ok()?;
    // The command name may contain spaces; fields resume after the last ')'.
    let rest = &text[text.rfind(')')? + 2..];
    let f: Vec<&str> = rest.split_whitespace().collect();
    let utime: f64 = f.get(11)?.parse().ok()?;
    let stime: f64 = f.get(12)?.parse().ok()?;
    Some((utime + stime) / clock_ticks())
}

fn status_kb(path: &str, key: &str) -> Option<u64> {
    let text = std::fs::read_to_string(path).ok()?;
    let line = text.lines().find(|l| l.starts_with(key))?;
    let kb: u64 = line[key.len()..].split_whitespace().next()?.parse().ok()?;
    Some(kb * 1024)
}

/// A child process, by pid.
pub struct ProcessSource {
    pub pid: i32,
}

impl StatsSource for ProcessSource {
    fn cpu_seconds(&mut self) -> Option<f64> {
        stat_cpu_seconds(&format!("/proc/{}/stat", self.pid))
    }
    fn resident_bytes(&mut self) -> Option<u64> {
        status_kb(&format!("/proc/{}/status", self.pid), "VmRSS:")
    }
}

/// A builtin running on thread `tid`, with its heap account.
pub struct ThreadSource {
    pub tid: i64,
    pub account: Option<Arc<Account>>,
}

impl StatsSource for ThreadSource {
    fn cpu_seconds(&mut self) -> Option<f64> {
        stat_cpu_seconds(&format!("/proc/self/task/{}/stat", self.tid))
    }
    fn resident_bytes(&mut self) -> Option<u64> {
        self.account.as_ref().map(|a| a.current())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unavailable_source_yields_absent_samples() {
        let s = sample_resources(Box::new(Unavailable), Duration::from_millis(5));
        std::thread::sleep(Duration::from_millis(20));
        let samples = s.finish();
        assert!(!samples.is_empty());
        assert!(samples.iter().all(|s| s.cpu_fraction.is_none() && s.resident_bytes.is_none()));
        assert_eq!(peak_resident(&samples), None);
    }

    #[test]
    fn thread_clock_advances_under_load() {
        let a = thread_cpu_seconds().unwrap();
        let until = Instant::now() + Duration::from_millis(30);
        let mut x = 1u64;
        while Instant::now() < until {
            x = std::hint::black_box(x.wrapping_mul(3).wrapping_add(1));
        }
        assert!(thread_cpu_seconds().unwrap() - a > 0.01);
    }

    #[test]
    fn proc_source_reads_self() {
        if std::path::Path::new("/proc/self/stat").exists() {
            let mut s = ProcessSource { pid: std::process::id() as i32 };
            assert!(s.cpu_seconds().is_some());
            assert!(s.resident_bytes().unwrap() > 0);
        }
    }
}
