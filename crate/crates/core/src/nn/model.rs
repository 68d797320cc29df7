use crate::error::Result;

/// A differentiable loss over a flat parameter vector.
///
/// Implemented by the network (in inspect mode, so evaluating the loss
/// never changes normalization state) and by the small analytic models the
/// probes and noise estimators are checked against.
pub trait Model {
    type Batch: ?Sized;

    fn parameters(&self) -> Vec<f64>;

    fn set_parameters(&mut self, flat: &[f64]) -> Result<()>;

    fn loss(&mut self, batch: &Self::Batch) -> Result<f64>;

    fn loss_and_gradient(&mut self, batch: &Self::Batch) -> Result<(f64, Vec<f64>)>;
}
