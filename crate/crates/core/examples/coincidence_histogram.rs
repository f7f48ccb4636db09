//! Start-stop coincidence histogram of a tag file, followed by the CAR and
//! true-pair-rate estimate.
//!
//! cargo run --release --example coincidence_histogram -- tags.csv 50 50000 500

use biphoton::coincidence::{car_and_rate, histogram};
use biphoton::io::read_bytes;
use biphoton::tagsim::{read_binary, read_csv};

fn main() -> biphoton::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().expect("usage: coincidence_histogram TAGS [BIN_PS WINDOW_PS PEAK_HALFWIDTH_PS]");
    let bin: u64 = args.next().map_or(50, |s| s.parse().expect("bin width in ps"));
    let window: u64 = args.next().map_or(50_000, |s| s.parse().expect("window in ps"));
    let peak: f64 = args.next().map_or(500.0, |s| s.parse().expect("peak half-width in ps"));

    let bytes = read_bytes(path.as_ref())?;
    let stream = if path.ends_with(".csv") {
        read_csv(&String::from_utf8_lossy(&bytes), &path)?
    } else {
        read_binary(&bytes, &path)?
    };
    let h = histogram(&stream, bin, window)?;
    let est = car_and_rate(&h, peak)?;
    eprintln!(
        "{} events, {} coincidences, CAR {:.1}, pair rate {:.2} ± {:.2} Hz",
        stream.len(),
        h.total(),
        est.car.value(),
        est.pair_rate_hz,
        est.pair_rate_sigma_hz
    );
    print!("{}", h.to_csv());
    Ok(())
}
