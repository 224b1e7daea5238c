//! Detectors: multiway decision trees, isolation forest, L1 logistic
//! regression and GBDT behind one [`Model`] type.

pub mod discretize;
pub mod features;
pub mod gbdt;
pub mod iforest;
pub mod lr;
pub mod model;
pub mod tree;

pub use discretize::{BinnedMatrix, Discretizer};
pub use features::{concat_features, split_features, FeatureMatrix};
pub use gbdt::{GbdtConfig, GbdtModel};
pub use iforest::IsolationForest;
pub use lr::LinearModel;
pub use model::{Detector, DetectorConfig, DetectorKind, Model};
pub use tree::{Criterion, DecisionTree, TreeConfig, TreeNode};
