//! End-to-end rig for the gateway: a demo site, a mock tracker, a scripted
//! browser, and scenarios that check whether the tracker can still link
//! visits.

pub mod browser;
pub mod scenario;
pub mod site;
pub mod tracker;
pub mod verdict;

pub use browser::{EmulatedBrowser, FetchRecord, Initiator, BROWSER_USER_AGENT};
pub use scenario::{run_all, run_scenario, Environment, HarnessError, Scenario, ScenarioReport};
pub use tracker::{Tracker, TrackerObservation};
pub use verdict::LinkageVerdict;
