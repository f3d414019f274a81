//! TMR and Hamming-code protection of the parameter store.

pub mod codec;
pub mod policy;
pub mod storage;
pub mod tradeoff;

pub use codec::{hamming_decode, hamming_encode, required_parity_bits, tmr_vote, Decoded, HammingCodeword};
pub use policy::{load_policies, parse_policies, ProtectionPolicy, Scheme, DEFAULT_GROUP_WIDTH};
pub use storage::{
    apply_and_inject, ecc_tmr_logic_ratio, ecc_tmr_storage_ratio, inject_storage_fault, logic_overhead, overhead_report,
    storage_overhead, LogicCostModel, OverheadReport, ProtectionMap, RecoveredWord, StorageFault,
};
pub use tradeoff::{residual_ssipp, tradeoff_curve, write_tradeoff_csv, TradeoffCurve, TradeoffPoint};
