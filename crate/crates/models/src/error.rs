use flowguide_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("training diverged at iteration {iteration}: loss {loss} against initial {initial}")]
    Diverged { iteration: usize, loss: f64, initial: f64 },
    #[error("frozen parameter group `{0}` changed during fine-tuning")]
    FrozenChanged(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;
