//! Fixtures shared by the pipeline benchmarks.

use intentguard::formspec::bank_transfer;
use intentguard::harness::campaign::{scenario_for_run, AttackMix, CampaignConfig, IMAGE_SIZE};
use intentguard::harness::{AttackKind, ScenarioParams};
use intentguard::screen::{make_pose, render, EditAction, EditEvent, Key, PoseKind};
use intentguard::vision::{match_to_spec, ocr_observe, realign_to_canonical};
use intentguard::{CameraPose, FrameObservation, ObservedForm, OcrNoiseModel, ScreenState};

/// The bank-transfer form with a few characters typed into the IBAN field.
pub fn typed_bank_form() -> ScreenState {
    let mut s = ScreenState::new(bank_transfer());
    let iban = "IBAN_value".to_string();
    s.apply_edit(&EditEvent::user(10, EditAction::Focus { element: iban.clone(), additional: false })).unwrap();
    for (i, c) in "CH93007".chars().enumerate() {
        let t = 200 + 150 * i as u64;
        s.apply_edit(&EditEvent::user(t, EditAction::Keypress { element: iban.clone(), key: Key::Char(c) })).unwrap();
    }
    s.advance_to(1500);
    s
}

pub fn pose(deg: f64) -> CameraPose {
    let kind = if deg == 0.0 { PoseKind::Straight } else { PoseKind::Inclined(deg) };
    make_pose(kind, IMAGE_SIZE).unwrap()
}

/// One camera frame through realignment, OCR noise and spec matching.
pub fn observe(state: &ScreenState, pose: &CameraPose, noise: &OcrNoiseModel, seed: u64) -> ObservedForm {
    let frame: FrameObservation = render(state, pose);
    let canon = realign_to_canonical(&frame).unwrap();
    match_to_spec(&ocr_observe(&canon, noise, seed), state.spec())
}

pub fn scenario(kind: AttackKind, seed: u64, noise: bool) -> ScenarioParams {
    let mut cfg = CampaignConfig::new(1, AttackMix::Single(kind), seed);
    if noise {
        cfg = cfg.with_noise("calibrated", OcrNoiseModel::calibrated());
    }
    scenario_for_run(&cfg, 0)
}
