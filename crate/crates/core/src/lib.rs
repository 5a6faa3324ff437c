//! Visual supervision of form input on an untrusted client.
//!
//! A trusted camera device watches the client's screen, checks that the form
//! it sees matches the layout published by the server, supervises every change
//! made during input, and sends its own authenticated copy of the values (the
//! proof-of-intent) to the server. The server accepts a request only when the
//! client channel and the proof-of-intent agree.
//!
//! The crate is organised along that pipeline:
//!
//! - [`formspec`]: form specifications, their document format and a random generator.
//! - [`screen`]: the simulated client screen, edit events and camera poses.
//! - [`vision`]: homography realignment, OCR noise, region matching, lenient equality.
//! - [`supervisor`]: the per-session supervision state machine and proof-of-intent.
//! - [`server`]: spec registry, two-channel session pairing and trace matching.
//! - [`harness`]: typists, attacks, scenarios and campaigns.

pub mod formspec;
pub mod geometry;
pub mod harness;
pub mod screen;
pub mod server;
pub mod supervisor;
pub mod textenc;
pub mod vision;

pub use formspec::{ElementKind, ElementSpec, FormSpecification, SupervisionPolicy};
pub use geometry::{Point, Quad, Rect};
pub use supervisor::{Alarm, AlarmKind, DeviceKey, Phase, ProofOfIntent, Supervisor};
pub use server::{Decision, Server, Verdict};
pub use harness::{AttackKind, OutcomeClass, ScenarioOutcome};
pub use screen::{CameraPose, EditEvent, FrameObservation, ScreenState};
pub use vision::{lenient_equal, Homography, ObservedForm, OcrNoiseModel};
