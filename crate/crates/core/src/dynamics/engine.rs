use std::collections::BTreeSet;
use std::sync::Arc;

use crate::scene::Scene;
use crate::types::{BodyId, BodyState, Contact, JointSpec, PairKey};

use super::collision::detect_collisions_filtered;
use super::integrate::integrate_body;
use super::mlcp::{assemble_mlcp, BodySlotInput, ImpulseCache, SolverConfig};
use super::pgs::{solve_pgs, SolverError};

/// Pairs connected by a joint. Jointed bodies never collide with each other.
pub fn jointed_pairs(scene: &Scene) -> BTreeSet<PairKey> {
    scene
        .joints
        .iter()
        .map(|j| PairKey::new(j.body_a, j.body_b))
        .collect()
}

/// Contacts among the given dynamic bodies and every static body of the scene.
pub fn collide_scene(
    scene: &Scene,
    states: &[BodyState],
    dynamic: impl IntoIterator<Item = BodyId>,
    jointed: &BTreeSet<PairKey>,
) -> Vec<Contact> {
    let participants: Vec<_> = dynamic
        .into_iter()
        .chain(scene.bodies.iter().filter(|b| b.is_static()).map(|b| b.id))
        .map(|id| (scene.body(id), &states[id.index()]))
        .collect();
    detect_collisions_filtered(&participants, |pair| jointed.contains(&pair))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub residual: f64,
    pub iterations: usize,
    pub contacts: usize,
    pub rows: usize,
}

/// A single physics-engine instance over a whole scene, simulating only its active bodies.
///
/// Inactive bodies keep their last state and take no part in collision detection or
/// constraint solving. Static bodies always participate.
#[derive(Clone, Debug)]
pub struct Engine {
    scene: Arc<Scene>,
    states: Vec<BodyState>,
    active: BTreeSet<BodyId>,
    jointed: BTreeSet<PairKey>,
    config: SolverConfig,
    cache: ImpulseCache,
}

impl Engine {
    /// Engine with no active bodies.
    pub fn new(scene: Arc<Scene>, config: SolverConfig) -> Self {
        Self {
            states: scene.initial_states(),
            jointed: jointed_pairs(&scene),
            scene,
            active: BTreeSet::new(),
            config,
            cache: ImpulseCache::default(),
        }
    }

    /// Engine simulating every dynamic body of the scene.
    pub fn standalone(scene: Arc<Scene>, config: SolverConfig) -> Self {
        let mut e = Self::new(scene, config);
        e.active = e.scene.dynamic_ids().collect();
        e
    }

    pub fn scene(&self) -> &Arc<Scene> {
        &self.scene
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn is_known(&self, id: BodyId) -> bool {
        self.scene.contains(id)
    }

    pub fn is_active(&self, id: BodyId) -> bool {
        self.active.contains(&id)
    }

    pub fn active(&self) -> &BTreeSet<BodyId> {
        &self.active
    }

    /// Returns false for static or unknown bodies, which cannot be activated.
    pub fn activate(&mut self, id: BodyId) -> bool {
        if !self.is_known(id) || self.scene.body(id).is_static() {
            return false;
        }
        self.active.insert(id);
        true
    }

    pub fn deactivate(&mut self, id: BodyId) -> bool {
        self.active.remove(&id)
    }

    pub fn state(&self, id: BodyId) -> &BodyState {
        &self.states[id.index()]
    }

    pub fn states(&self) -> &[BodyState] {
        &self.states
    }

    pub fn set_state(&mut self, id: BodyId, state: BodyState) {
        self.states[id.index()] = state;
    }

    /// Contacts among active and static bodies at the current states.
    pub fn contacts(&self) -> Vec<Contact> {
        collide_scene(
            &self.scene,
            &self.states,
            self.active.iter().copied(),
            &self.jointed,
        )
    }

    fn participates(&self, id: BodyId) -> bool {
        self.active.contains(&id) || self.scene.body(id).is_static()
    }

    /// One timestep: collision detection, MLCP assembly and solve, then integration.
    pub fn step(&mut self) -> Result<StepStats, SolverError> {
        let scene = Arc::clone(&self.scene);
        let h = scene.timestep;
        let contacts = self.contacts();
        let joints: Vec<&JointSpec> = scene
            .joints
            .iter()
            .filter(|j| self.participates(j.body_a) && self.participates(j.body_b))
            .collect();

        let mut inputs: Vec<BodySlotInput<'_>> = self
            .active
            .iter()
            .map(|&id| BodySlotInput { body: scene.body(id), state: self.states[id.index()] })
            .collect();
        inputs.extend(
            scene
                .bodies
                .iter()
                .filter(|b| b.is_static())
                .map(|b| BodySlotInput { body: b, state: self.states[b.id.index()] }),
        );

        let warm = self.config.warm_start.then_some(&self.cache);
        let asm = assemble_mlcp(&inputs, &joints, &contacts, h, scene.gravity, &self.config, warm);
        let solved = solve_pgs(&asm.problem, self.config.max_iter, self.config.tol)?;
        let lambda = solved.lambda.as_slice();
        let velocities = asm.velocities(lambda);
        for (&id, &slot) in &asm.slot_of {
            integrate_body(&mut self.states[id.index()], &velocities[slot], h);
        }
        if self.config.warm_start {
            self.cache = asm.cache(lambda);
        }
        Ok(StepStats {
            residual: solved.residual,
            iterations: solved.iterations,
            contacts: contacts.len(),
            rows: asm.problem.dim(),
        })
    }
}
