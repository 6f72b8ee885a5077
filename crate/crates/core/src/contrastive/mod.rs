//! Style-encoder pretraining with a supervised contrastive loss over
//! batches carrying BM25 hard negatives.

pub mod batch;
pub mod encoder;
pub mod loss;
pub mod pretrain;

pub use batch::{build_batch, docs_by_author, epoch_anchors, ContrastiveBatch};
pub use encoder::{encode_node, StyleEncoder, STYLE_PREFIX};
pub use loss::{supcon_loss, supcon_loss_with_logits};
pub use pretrain::{batch_gradients, pretrain, pretrain_from, LogRow, PretrainOutcome};
