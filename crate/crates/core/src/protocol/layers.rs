//! Reachability layers over the state set.
//!
//! Starting from `F_0 = {s_0}`, each layer adds the states producible by one
//! transition on a pair of states from the previous layer:
//! `F_{i+1} = F_i ∪ {s | δ(p, q) = (p', s) or δ(p, q) = (s, q'), p, q ∈ F_i}`.
//! The chain grows strictly until it reaches a fixpoint, within `|Q|`
//! iterations. Every state added at layer `i+1` carries one witness: the
//! first producing pair in (initiator index, responder index, output
//! position) lexicographic order.

use std::collections::BTreeSet;

use super::{ProtocolSpec, StateId};

/// Which output slot of `δ(initiator, responder)` produced the witnessed state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RulePosition {
    Initiator,
    Responder,
}

/// One producing pair for a state first reached at `layer`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub state: StateId,
    /// Layer index at which `state` first appears (so the pair lies in `F_{layer-1}`).
    pub layer: usize,
    pub initiator: StateId,
    pub responder: StateId,
    pub position: RulePosition,
}

/// The chain `F_0 ⊂ F_1 ⊂ … ⊂ F_{l_max}` with per-state witnesses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerStructure {
    layers: Vec<BTreeSet<StateId>>,
    witnesses: Vec<Witness>,
}

impl LayerStructure {
    /// Cumulative layer sets, index 0 holding `{s_0}`.
    pub fn layers(&self) -> &[BTreeSet<StateId>] {
        &self.layers
    }

    /// Index of the fixpoint layer: `F_{l_max + 1} = F_{l_max}`.
    pub fn l_max(&self) -> usize {
        self.layers.len() - 1
    }

    /// Union of all layers, equal to the last layer of the chain.
    pub fn reachable(&self) -> &BTreeSet<StateId> {
        self.layers.last().expect("layers are nonempty")
    }

    /// Witnesses in discovery order: by layer, then by first producing pair.
    pub fn witnesses(&self) -> &[Witness] {
        &self.witnesses
    }

    /// States added at `layer` (i.e. `F_layer \ F_{layer-1}`), in witness order.
    pub fn added_at(&self, layer: usize) -> impl Iterator<Item = &Witness> {
        self.witnesses.iter().filter(move |w| w.layer == layer)
    }
}

/// Fixpoint iteration of the layer rule from the all-`s_0` configuration.
pub fn compute_layers(protocol: &ProtocolSpec, s_0: StateId) -> LayerStructure {
    let mut layers = vec![BTreeSet::from([s_0])];
    let mut witnesses = Vec::new();
    loop {
        let current = layers.last().expect("nonempty");
        let layer = layers.len();
        let mut next = current.clone();
        for &a in current.iter() {
            for &b in current.iter() {
                let (out_a, out_b) = protocol.transition(a, b);
                for (position, s) in [
                    (RulePosition::Initiator, out_a),
                    (RulePosition::Responder, out_b),
                ] {
                    if next.insert(s) {
                        witnesses.push(Witness {
                            state: s,
                            layer,
                            initiator: a,
                            responder: b,
                            position,
                        });
                    }
                }
            }
        }
        if next.len() == current.len() {
            break;
        }
        layers.push(next);
    }
    LayerStructure { layers, witnesses }
}

/// States reachable from the all-`s_0` configuration: the union of all layers.
pub fn reachable_states(protocol: &ProtocolSpec, s_0: StateId) -> BTreeSet<StateId> {
    compute_layers(protocol, s_0).reachable().clone()
}
