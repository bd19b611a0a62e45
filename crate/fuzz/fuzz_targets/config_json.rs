#![no_main]

use libfuzzer_sys::fuzz_target;

use holorec_cli::commands::SimulateSpec;
use holorec_cli::manifest::RunManifest;
use holorec_neural::experiment::ExperimentSpec;
use holorec_neural::TrainConfig;

// Every JSON document the tool reads: specs, schedules and run manifests.
fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = serde_json::from_slice::<SimulateSpec>(data) {
        let _ = spec.dataset.scene.validate();
        let _ = spec.dataset.acquisition.validate();
        let _ = spec.dataset.input_heights(spec.m_inputs);
    }
    if let Ok(spec) = serde_json::from_slice::<ExperimentSpec>(data) {
        let _ = spec.validate();
    }
    if let Ok(cfg) = serde_json::from_slice::<TrainConfig>(data) {
        let _ = cfg.validate();
    }
    let _ = serde_json::from_slice::<RunManifest>(data);
});
