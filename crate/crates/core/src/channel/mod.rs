//! Software radio channel: path gains per link and channel, SINR-based frame
//! success, OFDM link rates, and scenario configuration.

pub mod phy;
pub mod scenario;
pub mod topology;

pub use phy::{ber, db_to_lin, dbm_to_mw, frame_success, lin_to_db, link_rate, mw_to_dbm, LinkRate, Modulation, Ofdm};
pub use scenario::{ChannelSpec, Coding, FlowSpec, LinkSpec, Phy, Scenario, ScenarioError, Timing, BUILTINS, PARAMS, STRONG_SNR_DB, WEAK_SNR_DB};
pub use topology::Topology;
