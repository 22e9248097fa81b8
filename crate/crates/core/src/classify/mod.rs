//! Discriminant classifiers: float QDA/LDA, the group → instruction
//! hierarchy and the integer-only scoring path.

pub mod fixed;
pub mod hier;
pub mod qda;

pub use fixed::{
    bubble_argmax, count_classifiers, quantize_model, quantize_model_scaled, FixedClass, FixedQda,
    Strategy, DEFAULT_FRAC_BITS,
};
pub use hier::{hier_classify, train_flat, train_hier, Extractor, FixedHier, HierModel, HierQda};
pub use qda::{
    classify, lda_classify, qda_scores, train_lda, train_qda, Discriminant, Qda, QdaClassParams,
};
