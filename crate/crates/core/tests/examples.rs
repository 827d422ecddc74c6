macro_rules! example {
    ($name:ident, $file:literal) => {
        #[allow(dead_code)]
        mod $name {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }

        #[test]
        fn $name() {
            $name::run().expect(concat!($file, " should run"));
        }
    };
}

example!(identify_effects, "identify_effects.rs");
example!(coarsen_proxies, "coarsen_proxies.rs");
example!(null_test, "null_test.rs");
example!(single_proxy_test, "single_proxy_test.rs");
example!(gaussian_proxies, "gaussian_proxies.rs");
example!(fredholm_tikhonov, "fredholm_tikhonov.rs");
example!(simulation_study, "simulation_study.rs");
example!(error_mechanism, "error_mechanism.rs");
example!(sample_and_check, "sample_and_check.rs");
