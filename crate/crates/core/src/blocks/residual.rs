use super::registry::BlockRegistry;
use super::BlockSpec;
use crate::audit::AuditRow;
use crate::error::{Error, Result};
use crate::nn::{join, missing_forward, ConvUnit, FeatureShape, Layer, Mode, ParamMut, ParamRef, SeedRng};
use crate::ops::{activation, activation_backward, Activation, ConvKind};
use crate::tensor::{Scalar, Tensor};

/// Bottleneck-style block: `pointwise → spatial convs → pointwise`, an
/// optional residual add and a final ReLU after the add.
///
/// Every conv is followed by norm + ReLU except the last pointwise, which only
/// gets the norm before the add.
pub struct ResidualBlock<T: Scalar = f32> {
    spec: BlockSpec,
    units: Vec<(String, ConvUnit<T>)>,
    shortcut: Option<ConvUnit<T>>,
    out: Option<Tensor<T>>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn build(spec: &BlockSpec, norm: bool, registry: &BlockRegistry, rng: &mut SeedRng) -> Result<Self> {
        let variant = registry.require(&spec.kind)?;
        spec.validate()?;
        if spec.ns != variant.standard_count() || spec.nd != variant.depthwise_count() {
            return Err(Error::config(format!(
                "block '{}' has Ns={}, Nd={}, spec says Ns={}, Nd={}",
                spec.kind,
                variant.standard_count(),
                variant.depthwise_count(),
                spec.ns,
                spec.nd
            )));
        }
        let mut units = Vec::new();
        units.push((
            "pw_in".to_string(),
            ConvUnit::new(ConvKind::Pointwise, spec.c_in, spec.c_mid, 1, spec.stride, norm, true, rng)?,
        ));
        for (i, sc) in variant.spatial_convs().into_iter().enumerate() {
            let name = match sc.kind {
                ConvKind::Depthwise => format!("dw{i}"),
                _ => format!("conv{i}"),
            };
            units.push((
                name,
                ConvUnit::new(sc.kind, spec.c_mid, spec.c_mid, sc.k, 1, norm, true, rng)?,
            ));
        }
        units.push((
            "pw_out".to_string(),
            ConvUnit::new(ConvKind::Pointwise, spec.c_mid, spec.c_out, 1, 1, norm, false, rng)?,
        ));
        let shortcut = if spec.projection {
            Some(ConvUnit::new(
                ConvKind::Pointwise,
                spec.c_in,
                spec.c_out,
                1,
                spec.stride,
                norm,
                false,
                rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            spec: spec.clone(),
            units,
            shortcut,
            out: None,
        })
    }

    pub fn spec(&self) -> &BlockSpec {
        &self.spec
    }

    /// Named conv units in execution order (shortcut excluded).
    pub fn units(&self) -> impl Iterator<Item = (&str, &ConvUnit<T>)> {
        self.units.iter().map(|(n, u)| (n.as_str(), u))
    }

    pub fn units_mut(&mut self) -> impl Iterator<Item = (&str, &mut ConvUnit<T>)> {
        self.units.iter_mut().map(|(n, u)| (n.as_str(), u))
    }

    /// Convolution weights only, or everything learnable when `include_norm`.
    pub fn param_count_with(&self, include_norm: bool) -> usize {
        if include_norm {
            return self.param_count();
        }
        let mut total: usize = self.units.iter().map(|(_, u)| u.conv.weight().param_count()).sum();
        if let Some(s) = &self.shortcut {
            total += s.conv.weight().param_count();
        }
        total
    }
}

impl<T: Scalar> Layer<T> for ResidualBlock<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for (_, unit) in &mut self.units {
            x = unit.forward(&x, mode)?;
        }
        if let Some(sc) = &mut self.shortcut {
            x.add_assign(&sc.forward(input, mode)?)?;
        } else if self.spec.residual {
            x.add_assign(input)?;
        }
        let out = activation(&x, Activation::Relu);
        self.out = (mode == Mode::Train).then(|| out.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.out.take().ok_or_else(|| missing_forward("residual block"))?;
        let g = activation_backward(&out, Activation::Relu, grad_out)?;
        let mut gi = g.clone();
        for (_, unit) in self.units.iter_mut().rev() {
            gi = unit.backward(&gi)?;
        }
        if let Some(sc) = &mut self.shortcut {
            gi.add_assign(&sc.backward(&g)?)?;
        } else if self.spec.residual {
            gi.add_assign(&g)?;
        }
        Ok(gi)
    }

    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, ParamRef<'a, T>)) {
        for (name, unit) in &self.units {
            unit.visit_params(&join(prefix, name), f);
        }
        if let Some(sc) = &self.shortcut {
            sc.visit_params(&join(prefix, "shortcut"), f);
        }
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, ParamMut<'a, T>)) {
        for (name, unit) in &mut self.units {
            unit.visit_params_mut(&join(prefix, name), f);
        }
        if let Some(sc) = &mut self.shortcut {
            sc.visit_params_mut(&join(prefix, "shortcut"), f);
        }
    }

    fn visit_buffers<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        for (name, unit) in &self.units {
            unit.visit_buffers(&join(prefix, name), f);
        }
        if let Some(sc) = &self.shortcut {
            sc.visit_buffers(&join(prefix, "shortcut"), f);
        }
    }

    fn visit_buffers_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        for (name, unit) in &mut self.units {
            unit.visit_buffers_mut(&join(prefix, name), f);
        }
        if let Some(sc) = &mut self.shortcut {
            sc.visit_buffers_mut(&join(prefix, "shortcut"), f);
        }
    }

    fn audit(&self, prefix: &str, input: FeatureShape, rows: &mut Vec<AuditRow>) -> FeatureShape {
        let mut shape = input;
        for (name, unit) in &self.units {
            shape = unit.audit(&join(prefix, name), shape, rows);
        }
        if let Some(sc) = &self.shortcut {
            sc.audit(&join(prefix, "shortcut"), input, rows);
        }
        if self.spec.residual || self.shortcut.is_some() {
            rows.push(AuditRow::elementwise(join(prefix, "add"), "add", shape));
        }
        rows.push(AuditRow::elementwise(join(prefix, "relu"), "relu", shape));
        shape
    }
}
