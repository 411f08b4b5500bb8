//! Per-frame patch discriminator with the non-saturating logistic loss.

use flowguide_core::Prng;
use flowguide_nn::layers::Conv2d;
use flowguide_nn::{Graph, ParamStore, Var};

pub const DISC_GROUP: &str = "disc.";

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub store: ParamStore,
    layers: [Conv2d; 3],
}

impl Discriminator {
    pub fn new(rng: &mut Prng) -> Self {
        let mut store = ParamStore::new();
        let layers = [
            Conv2d::new(&mut store, "disc.conv1", 3, 32, 3, 2, rng),
            Conv2d::new(&mut store, "disc.conv2", 32, 64, 3, 2, rng),
            Conv2d::new(&mut store, "disc.conv3", 64, 1, 3, 1, rng),
        ];
        Self { store, layers }
    }

    /// Patch logits `[B, 1, H/4, W/4]` for frames `[B, 3, H, W]`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let mut h = self.layers[0].forward(g, &self.store, x);
        h = g.leaky_relu(h, 0.2);
        h = self.layers[1].forward(g, &self.store, h);
        h = g.leaky_relu(h, 0.2);
        self.layers[2].forward(g, &self.store, h)
    }

    /// Generator term `Σ softplus(−D(fake))`.
    pub fn generator_loss(&self, g: &mut Graph, fake: Var) -> Var {
        let logits = self.forward(g, fake);
        let neg = g.scale(logits, -1.0);
        let sp = g.softplus(neg);
        g.sum(sp)
    }

    /// Discriminator term `Σ softplus(−D(real)) + Σ softplus(D(fake))`.
    pub fn critic_loss(&self, g: &mut Graph, real: Var, fake: Var) -> Var {
        let lr = self.forward(g, real);
        let lr = g.scale(lr, -1.0);
        let lr = g.softplus(lr);
        let lf = self.forward(g, fake);
        let lf = g.softplus(lf);
        let a = g.sum(lr);
        let b = g.sum(lf);
        g.add(a, b)
    }
}
