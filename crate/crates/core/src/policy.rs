//! Quotes and feedback policies shared by the solvers and the simulator.

use crate::model::Side;

/// A quoted spread, or a stub quote on a side blocked by the inventory cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quote {
    Spread(f64),
    Stub,
}

impl Quote {
    pub fn spread(self) -> Option<f64> {
        match self {
            Quote::Spread(d) => Some(d),
            Quote::Stub => None,
        }
    }

    pub fn is_stub(self) -> bool {
        matches!(self, Quote::Stub)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuotePair {
    pub bid: Quote,
    pub ask: Quote,
}

impl QuotePair {
    pub fn new(bid: Quote, ask: Quote) -> Self {
        QuotePair { bid, ask }
    }

    pub fn symmetric(delta: f64) -> Self {
        QuotePair { bid: Quote::Spread(delta), ask: Quote::Spread(delta) }
    }

    pub fn side(&self, side: Side) -> Quote {
        match side {
            Side::Bid => self.bid,
            Side::Ask => self.ask,
        }
    }
}

/// What a policy may look at when quoting.
#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    pub t: f64,
    pub inventory: i64,
    pub filter: &'a [f64],
    /// The true regime, only available to full-information policies.
    pub regime: Option<usize>,
}

/// Feedback map `(t, n, π) → (δ⁻, δ⁺)`.
pub trait Policy: Sync {
    fn quotes(&self, ctx: &PolicyContext<'_>) -> QuotePair;

    /// Lower bound of every spread the policy can emit; used for the
    /// thinning bound.
    fn min_spread(&self) -> f64;

    /// Whether [`PolicyContext::regime`] must be populated.
    fn needs_regime(&self) -> bool {
        false
    }
}

/// Constant spreads on both sides, stubbing sides blocked by the cap.
#[derive(Debug, Clone, Copy)]
pub struct FixedSpreads {
    pub delta: f64,
    pub cap: crate::model::InventoryCap,
}

impl Policy for FixedSpreads {
    fn quotes(&self, ctx: &PolicyContext<'_>) -> QuotePair {
        let side = |s| if self.cap.side_open(s, ctx.inventory) { Quote::Spread(self.delta) } else { Quote::Stub };
        QuotePair { bid: side(Side::Bid), ask: side(Side::Ask) }
    }

    fn min_spread(&self) -> f64 {
        self.delta
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn quotes(&self, ctx: &PolicyContext<'_>) -> QuotePair {
        (**self).quotes(ctx)
    }
    fn min_spread(&self) -> f64 {
        (**self).min_spread()
    }
    fn needs_regime(&self) -> bool {
        (**self).needs_regime()
    }
}
