pub mod episode;
pub mod io;
pub mod raster;
pub mod world;

pub use episode::{AccessLog, Episode, EpisodeSampler, FewShotSubset, Query};
pub use world::{generate_dataset, Dataset, DatasetSize, ShapeWorldSpec};
