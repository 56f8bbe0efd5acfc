//! Evaluation: text metrics, transfer accuracy under a held-out judge, and
//! tradeoff sweeps with the model-selection score.

mod judge;
mod metrics;
mod sweep;

pub use judge::{transfer_accuracy, Judge};
pub use metrics::{bleu, sari, sari_sentence, self_bleu, sentence_bleu, MAX_ORDER, SENTENCE_SMOOTHING};
pub use sweep::{
    inversions, nearest_by_accuracy, read_sweep_csv, select_lambda_adv, selection_score, tradeoff_sweep,
    write_sweep_csv, EvalReport, PointMetrics, TradeoffPoint, FAILED,
};
