pub mod arm;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod excitation;
pub mod experiment;
pub mod filter;
pub mod gradcheck;
pub mod identify;
pub mod model;
pub mod oracle;
pub mod report;
