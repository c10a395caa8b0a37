use choroid_core::gpet::{trace_choroid, BoundaryInput, GpetConfig};
use choroid_core::mmcq::{segment_vessels, MmcqConfig};
use choroid_core::phantom::{generate, PhantomConfig, PhantomShape};

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn traces_identical_across_thread_counts() {
    let mut config = PhantomConfig::scaled(PhantomShape::Skewed { angle_deg: 5.0 }, 256, 256);
    config.vessels = true;
    let phantom = generate(&config).unwrap();
    let upper = BoundaryInput { endpoints: phantom.endpoints.upper, guides: vec![] };
    let lower = BoundaryInput { endpoints: phantom.endpoints.lower, guides: vec![] };
    let gpet = GpetConfig::for_shape(256, 256);
    let run = || {
        let (up, lo, region) = trace_choroid(&phantom.scan, &upper, &lower, &gpet).unwrap();
        let vessels = segment_vessels(&phantom.scan, &region, Some(&up.trace), &MmcqConfig::default()).unwrap();
        (up.trace, lo.trace, region.pixels, vessels.pixels)
    };
    let single = in_pool(1, run);
    let several = in_pool(4, run);
    assert_eq!(single, several);
}
