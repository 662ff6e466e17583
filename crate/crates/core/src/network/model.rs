use std::collections::BTreeMap;

use super::layers::{ConvBnTape, ParamVisitor, ResTape};
use super::{ConvBn, CrossDomainSpec, LayerName, NamedTensor, NetworkSpec, ResModule};
use crate::tensor::{dropout, dropout_backward, Real, Shape4, Tensor4};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Branch-private layers: filter bank, C2 and the C7–C9 head.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch<T> {
    pub spec: NetworkSpec,
    pub bank: [ConvBn<T>; 3],
    pub c2: ConvBn<T>,
    pub c7: ConvBn<T>,
    pub c8: ConvBn<T>,
    pub c9: ConvBn<T>,
}

impl<T: Real> Branch<T> {
    fn new(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let (f, b) = (spec.filters, spec.bands);
        Ok(Self {
            spec: spec.clone(),
            bank: [
                ConvBn::new(LayerName::C1x1, f, b, 1, true, true)?,
                ConvBn::new(LayerName::C3x3, f, b, 3, true, true)?,
                ConvBn::new(LayerName::C5x5, f, b, 5, true, true)?,
            ],
            c2: ConvBn::new(LayerName::C2, f, 3 * f, 1, true, true)?,
            c7: ConvBn::new(LayerName::C7, f, f, 1, true, true)?,
            c8: ConvBn::new(LayerName::C8, f, f, 1, true, true)?,
            c9: ConvBn::new(LayerName::C9, spec.classes, f, 1, false, false)?,
        })
    }

    fn front_mut(&mut self) -> impl Iterator<Item = &mut ConvBn<T>> {
        self.bank.iter_mut().chain(std::iter::once(&mut self.c2))
    }

    fn head_mut(&mut self) -> impl Iterator<Item = &mut ConvBn<T>> {
        [&mut self.c7, &mut self.c8, &mut self.c9].into_iter()
    }

    pub fn layers(&self) -> Vec<&ConvBn<T>> {
        let mut v: Vec<&ConvBn<T>> = self.bank.iter().collect();
        v.extend([&self.c2, &self.c7, &self.c8, &self.c9]);
        v
    }

    fn init_front(&mut self, rng: &mut crate::Rng) {
        self.front_mut().for_each(|l| l.init(rng));
    }

    fn init_head(&mut self, rng: &mut crate::Rng) {
        self.head_mut().for_each(|l| l.init(rng));
    }

    fn visit_front(&mut self, f: &mut ParamVisitor<'_, T>) -> Result<()> {
        self.front_mut().try_for_each(|l| l.visit_params(f))
    }

    fn visit_head(&mut self, f: &mut ParamVisitor<'_, T>) -> Result<()> {
        self.head_mut().try_for_each(|l| l.visit_params(f))
    }

    fn state(&self, prefix: &str, out: &mut Vec<NamedTensor<T>>) {
        for l in self.layers() {
            l.state(prefix, out);
        }
    }

    fn load_state(&mut self, prefix: &str, map: &mut BTreeMap<String, NamedTensor<T>>) -> Result<()> {
        self.front_mut().try_for_each(|l| l.load_state(prefix, map))?;
        self.head_mut().try_for_each(|l| l.load_state(prefix, map))
    }

    fn cast<U: Real>(&self) -> Branch<U> {
        Branch {
            spec: self.spec.clone(),
            bank: [self.bank[0].cast(), self.bank[1].cast(), self.bank[2].cast()],
            c2: self.c2.cast(),
            c7: self.c7.cast(),
            c8: self.c8.cast(),
            c9: self.c9.cast(),
        }
    }

    fn check_input(&self, s: Shape4) -> Result<()> {
        if s.c != self.spec.bands {
            return Err(Error::shape(
                "forward",
                format!("{} bands", self.spec.bands),
                format!("{} bands in batch {s}", s.c),
            ));
        }
        if s.h != self.spec.patch || s.w != self.spec.patch {
            return Err(Error::shape(
                "forward",
                format!("{0}x{0} patches", self.spec.patch),
                format!("{}x{} in batch {s}", s.h, s.w),
            ));
        }
        Ok(())
    }
}

fn check_trunk<T>(trunk: &[ResModule<T>], spec: &NetworkSpec) -> Result<()> {
    if trunk.len() != spec.residual_modules {
        return Err(Error::Config(format!(
            "trunk has {} residual modules, branch expects {}",
            trunk.len(),
            spec.residual_modules
        )));
    }
    Ok(())
}

fn centre<T: Real>(z: &Tensor4<T>) -> Tensor4<T> {
    let s = z.shape();
    let (cy, cx) = (s.h / 2, s.w / 2);
    Tensor4::from_fn(Shape4::new(s.n, s.c, 1, 1), |n, c, _, _| z.get(n, c, cy, cx))
}

fn centre_backward<T: Real>(g: &Tensor4<T>, full: Shape4) -> Tensor4<T> {
    let mut out = Tensor4::zeros(full);
    let (cy, cx) = (full.h / 2, full.w / 2);
    for n in 0..full.n {
        for c in 0..full.c {
            out.set(n, c, cy, cx, g.get(n, c, 0, 0));
        }
    }
    out
}

/// Activations saved by a training-mode forward.
pub struct BranchTape<T> {
    bank: Vec<ConvBnTape<T>>,
    c2: ConvBnTape<T>,
    trunk: Vec<ResTape<T>>,
    c7: ConvBnTape<T>,
    mask7: Option<Vec<T>>,
    c8: ConvBnTape<T>,
    mask8: Option<Vec<T>>,
    c9: ConvBnTape<T>,
    full: Shape4,
}

impl<T: Real> BranchTape<T> {
    /// Sign of every ReLU input, in forward order.
    pub fn relu_signs(&self) -> Vec<bool> {
        let mut out = Vec::new();
        self.bank.iter().for_each(|t| t.relu_signs(&mut out));
        self.c2.relu_signs(&mut out);
        self.trunk.iter().for_each(|t| t.relu_signs(&mut out));
        self.c7.relu_signs(&mut out);
        self.c8.relu_signs(&mut out);
        out
    }
}

/// Read-only view of one complete backbone: branch layers plus the trunk.
#[derive(Clone, Copy)]
pub struct BranchRef<'a, T> {
    pub branch: &'a Branch<T>,
    pub trunk: &'a [ResModule<T>],
}

impl<T: Real> BranchRef<'_, T> {
    pub fn spec(&self) -> &NetworkSpec {
        &self.branch.spec
    }

    /// Eval-mode forward: running BN statistics, no dropout. Returns
    /// `(n, classes, 1, 1)` logits of the centre pixel.
    pub fn forward_eval(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let b = self.branch;
        b.check_input(x.shape())?;
        check_trunk(self.trunk, &b.spec)?;
        let parts = b
            .bank
            .iter()
            .map(|l| l.forward_eval(x))
            .collect::<Result<Vec<_>>>()?;
        let mut h = b.c2.forward_eval(&Tensor4::concat_channels(&parts.iter().collect::<Vec<_>>())?)?;
        for m in self.trunk {
            h = m.forward_eval(&h)?;
        }
        h = b.c7.forward_eval(&h)?;
        h = b.c8.forward_eval(&h)?;
        Ok(centre(&b.c9.forward_eval(&h)?))
    }
}

/// Mutable view of one complete backbone. For a cross-domain network the
/// trunk is the shared store, so updates through one branch are seen by all.
pub struct BranchMut<'a, T> {
    pub branch: &'a mut Branch<T>,
    pub trunk: &'a mut [ResModule<T>],
}

impl<T: Real> BranchMut<'_, T> {
    pub fn as_ref(&self) -> BranchRef<'_, T> {
        BranchRef {
            branch: self.branch,
            trunk: self.trunk,
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.branch.spec
    }

    /// Training-mode forward: batch BN statistics (running stats updated) and
    /// dropout after C7 and C8 drawn from `rng`.
    pub fn forward_train(
        &mut self,
        x: &Tensor4<T>,
        rng: &mut crate::Rng,
    ) -> Result<(Tensor4<T>, BranchTape<T>)> {
        let rate = self.branch.spec.dropout_rate;
        let b = &mut *self.branch;
        b.check_input(x.shape())?;
        check_trunk(self.trunk, &b.spec)?;
        let mut parts = Vec::with_capacity(3);
        let mut bank = Vec::with_capacity(3);
        for l in b.bank.iter_mut() {
            let (o, t) = l.forward_train(x)?;
            parts.push(o);
            bank.push(t);
        }
        let cat = Tensor4::concat_channels(&parts.iter().collect::<Vec<_>>())?;
        let (mut h, c2) = b.c2.forward_train(&cat)?;
        let mut trunk = Vec::with_capacity(self.trunk.len());
        for m in self.trunk.iter_mut() {
            let (o, t) = m.forward_train(&h)?;
            h = o;
            trunk.push(t);
        }
        let (h7, c7) = b.c7.forward_train(&h)?;
        let (h7, mask7) = dropout(&h7, rate, true, rng)?;
        let (h8, c8) = b.c8.forward_train(&h7)?;
        let (h8, mask8) = dropout(&h8, rate, true, rng)?;
        let (z, c9) = b.c9.forward_train(&h8)?;
        let tape = BranchTape {
            bank,
            c2,
            trunk,
            c7,
            mask7,
            c8,
            mask8,
            c9,
            full: z.shape(),
        };
        Ok((centre(&z), tape))
    }

    /// Backward from logit gradients. Overwrites the gradient of every
    /// parameter on the path; returns the input gradient if `need_input`.
    pub fn backward(
        &mut self,
        tape: &BranchTape<T>,
        grad_logits: &Tensor4<T>,
        need_input: bool,
    ) -> Result<Option<Tensor4<T>>> {
        let b = &mut *self.branch;
        let gz = centre_backward(grad_logits, tape.full);
        let g = b.c9.backward(&tape.c9, &gz, true)?.expect("requested");
        let g = dropout_backward(tape.mask8.as_deref(), &g)?;
        let g = b.c8.backward(&tape.c8, &g, true)?.expect("requested");
        let g = dropout_backward(tape.mask7.as_deref(), &g)?;
        let mut g = b.c7.backward(&tape.c7, &g, true)?.expect("requested");
        for (m, t) in self.trunk.iter_mut().zip(&tape.trunk).rev() {
            g = m.backward(t, &g)?;
        }
        let gcat = b.c2.backward(&tape.c2, &g, true)?.expect("requested");
        let f = b.spec.filters;
        let gparts = gcat.split_channels(&[f, f, f])?;
        let mut gx: Option<Tensor4<T>> = None;
        for ((l, t), gp) in b.bank.iter_mut().zip(&tape.bank).zip(&gparts) {
            if let Some(gi) = l.backward(t, gp, need_input)? {
                gx = Some(match gx {
                    Some(acc) => acc.add(&gi)?,
                    None => gi,
                });
            }
        }
        Ok(gx)
    }

    /// Visits every parameter in forward order.
    pub fn visit_params(&mut self, f: &mut ParamVisitor<'_, T>) -> Result<()> {
        self.branch.visit_front(f)?;
        for m in self.trunk.iter_mut() {
            m.visit_params(f)?;
        }
        self.branch.visit_head(f)
    }
}

/// A single-domain backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub branch: Branch<T>,
    pub trunk: Vec<ResModule<T>>,
    /// Completed training iterations of the current schedule.
    pub iteration: u64,
}

impl<T: Real> Network<T> {
    /// Zero-valued network; call [`init_weights`] before use.
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        let branch = Branch::new(spec)?;
        let trunk = (1..=spec.residual_modules)
            .map(|m| ResModule::new(m, spec.filters))
            .collect::<Result<_>>()?;
        Ok(Self {
            branch,
            trunk,
            iteration: 0,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.branch.spec
    }

    pub fn view(&self) -> BranchRef<'_, T> {
        BranchRef {
            branch: &self.branch,
            trunk: &self.trunk,
        }
    }

    pub fn view_mut(&mut self) -> BranchMut<'_, T> {
        BranchMut {
            branch: &mut self.branch,
            trunk: &mut self.trunk,
        }
    }

    /// Logits `(n, classes, 1, 1)` for a batch of `(n, bands, patch, patch)`.
    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode, rng: &mut crate::Rng) -> Result<Tensor4<T>> {
        match mode {
            Mode::Eval => self.view().forward_eval(x),
            Mode::Train => Ok(self.view_mut().forward_train(x, rng)?.0),
        }
    }

    /// Every convolution layer in forward order.
    pub fn layers(&self) -> Vec<&ConvBn<T>> {
        let l = self.branch.layers();
        let mut v = l[..4].to_vec();
        for m in &self.trunk {
            v.extend(m.layers());
        }
        v.extend(&l[4..]);
        v
    }

    /// Weighted layers counting the three bank convolutions as one.
    pub fn weighted_layers(&self) -> usize {
        self.layers().len() - 2
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    pub fn state(&self) -> Vec<NamedTensor<T>> {
        let mut out = Vec::new();
        self.branch.state("", &mut out);
        for m in &self.trunk {
            m.conv1.state("", &mut out);
            m.conv2.state("", &mut out);
        }
        out
    }

    pub(crate) fn load_state(&mut self, map: &mut BTreeMap<String, NamedTensor<T>>) -> Result<()> {
        self.branch.load_state("", map)?;
        for m in &mut self.trunk {
            m.layers_mut().into_iter().try_for_each(|l| l.load_state("", map))?;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            branch: self.branch.cast(),
            trunk: self.trunk.iter().map(ResModule::cast).collect(),
            iteration: self.iteration,
        }
    }
}

/// N backbones that share one physical residual trunk.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossDomainNetwork<T> {
    pub spec: CrossDomainSpec,
    pub branches: Vec<Branch<T>>,
    pub trunk: Vec<ResModule<T>>,
    pub iteration: u64,
}

impl<T: Real> CrossDomainNetwork<T> {
    pub fn zeros(spec: &CrossDomainSpec) -> Result<Self> {
        spec.validate()?;
        let branches = spec.branches.iter().map(Branch::new).collect::<Result<_>>()?;
        let trunk = (1..=spec.residual_modules())
            .map(|m| ResModule::new(m, spec.filters()))
            .collect::<Result<_>>()?;
        Ok(Self {
            spec: spec.clone(),
            branches,
            trunk,
            iteration: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    pub fn branch(&self, d: usize) -> BranchRef<'_, T> {
        BranchRef {
            branch: &self.branches[d],
            trunk: &self.trunk,
        }
    }

    pub fn branch_mut(&mut self, d: usize) -> BranchMut<'_, T> {
        BranchMut {
            branch: &mut self.branches[d],
            trunk: &mut self.trunk,
        }
    }

    pub fn physical_param_count(&self) -> usize {
        let branches: usize = self
            .branches
            .iter()
            .flat_map(|b| b.layers())
            .map(|l| l.param_count())
            .sum();
        let trunk: usize = self
            .trunk
            .iter()
            .flat_map(|m| m.layers())
            .map(|l| l.param_count())
            .sum();
        branches + trunk
    }

    /// Trunk tensors as read through branch `d`.
    pub fn shared_state_via(&self, d: usize) -> Vec<NamedTensor<T>> {
        let view = self.branch(d);
        let mut out = Vec::new();
        for m in view.trunk {
            m.conv1.state("shared.", &mut out);
            m.conv2.state("shared.", &mut out);
        }
        out
    }

    pub fn state(&self) -> Vec<NamedTensor<T>> {
        let mut out = self.shared_state_via(0);
        for (d, b) in self.branches.iter().enumerate() {
            b.state(&format!("branch{d}."), &mut out);
        }
        out
    }

    pub(crate) fn load_state(&mut self, map: &mut BTreeMap<String, NamedTensor<T>>) -> Result<()> {
        for m in &mut self.trunk {
            m.layers_mut().into_iter().try_for_each(|l| l.load_state("shared.", map))?;
        }
        for (d, b) in self.branches.iter_mut().enumerate() {
            b.load_state(&format!("branch{d}."), map)?;
        }
        Ok(())
    }
}

/// Builds and initialises a single backbone.
pub fn build_backbone<T: Real>(spec: &NetworkSpec, rng: &mut crate::Rng) -> Result<Network<T>> {
    let mut net = Network::zeros(spec)?;
    init_weights(&mut net, rng);
    Ok(net)
}

/// Gaussian(0, 0.01) for the bank, C2 and C9; Gaussian(0, 0.005) for the
/// residual modules, C7 and C8. Biases 0, BN identity, momentum cleared.
/// Layers are drawn in forward order.
pub fn init_weights<T: Real>(net: &mut Network<T>, rng: &mut crate::Rng) {
    net.branch.init_front(rng);
    for m in &mut net.trunk {
        m.init(rng);
    }
    net.branch.init_head(rng);
}

/// Builds a cross-domain network. The trunk is drawn first, then each
/// branch in order.
pub fn build_cross_domain<T: Real>(
    spec: &CrossDomainSpec,
    rng: &mut crate::Rng,
) -> Result<CrossDomainNetwork<T>> {
    let mut net = CrossDomainNetwork::zeros(spec)?;
    for m in &mut net.trunk {
        m.init(rng);
    }
    for b in &mut net.branches {
        b.init_front(rng);
        b.init_head(rng);
    }
    Ok(net)
}

/// Fresh target network whose residual modules carry the pre-trained trunk
/// (conv weights, biases, BN scale/shift). BN running statistics, momentum
/// and every other layer start from scratch.
pub fn transfer_shared<T: Real>(
    pretrained: &CrossDomainNetwork<T>,
    target: &NetworkSpec,
    rng: &mut crate::Rng,
) -> Result<Network<T>> {
    target.validate()?;
    if target.residual_modules != pretrained.spec.residual_modules() {
        return Err(Error::Transfer(format!(
            "target has {} residual modules, pre-trained trunk has {}",
            target.residual_modules,
            pretrained.spec.residual_modules()
        )));
    }
    if target.filters != pretrained.spec.filters() {
        return Err(Error::Transfer(format!(
            "target has {} filters, pre-trained trunk has {}",
            target.filters,
            pretrained.spec.filters()
        )));
    }
    let mut net = build_backbone(target, rng)?;
    for (dst, src) in net.trunk.iter_mut().zip(&pretrained.trunk) {
        dst.conv1.copy_trainable_from(&src.conv1)?;
        dst.conv2.copy_trainable_from(&src.conv2)?;
    }
    Ok(net)
}
