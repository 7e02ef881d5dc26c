pub mod polynomial;
pub mod sdp;
pub mod semialgebraic;
pub mod simulate;
pub mod sos;
pub mod synthesis;
pub mod value_bounds;
