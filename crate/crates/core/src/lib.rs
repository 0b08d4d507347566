pub mod cli;
pub mod cnn3d;
pub mod data_model;
pub mod experiments;
pub mod fusion;
pub mod ingest;
pub mod learners;
pub mod radiomics;
pub mod seeding;
pub mod semisup;
