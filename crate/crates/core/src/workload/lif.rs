use super::model::{LayerKind, NeuronParams, SnnModel};
use super::trace::{random_input, SpikeRecord, SpikeTrace, TraceError};

pub fn sat16(x: i64) -> i16 {
    x.clamp(i16::MIN as i64, i16::MAX as i64) as i16
}

/// One timestep of a hard-reset LIF neuron: leak, add the summed input current,
/// fire on `v >= threshold`.
pub fn lif_update(v: i16, input: i64, p: NeuronParams) -> (i16, bool) {
    let leaked = (v as i64 * p.leak_q8 as i64) >> 8;
    let v = sat16(leaked + input);
    if v >= p.threshold {
        (p.reset, true)
    } else {
        (v, false)
    }
}

/// Software forward pass of the whole network, timestep-major. Input spikes are
/// the layer-0 records of `input`; the returned trace holds every layer.
pub fn lif_generate_trace(model: &SnnModel, input: &SpikeTrace) -> Result<SpikeTrace, TraceError> {
    input.check_model(model)?;
    let sizes = model.layer_sizes();
    let mut membranes: Vec<Vec<i16>> = sizes.iter().map(|&s| vec![0; s as usize]).collect();
    let mut out: Vec<SpikeRecord> = Vec::new();
    for t in 0..model.timesteps {
        let mut spiked = vec![false; sizes[0] as usize];
        for r in input.slice(t, 0) {
            spiked[r.neuron as usize] = true;
            out.push(*r);
        }
        for (li, layer) in model.layers.iter().enumerate() {
            let l = li + 1;
            let current = gather(&layer.kind, layer.input, layer.output, &spiked);
            let mut next = vec![false; sizes[l] as usize];
            match layer.neuron {
                Some(p) => {
                    for (n, &i) in current.iter().enumerate() {
                        let (v, fire) = lif_update(membranes[l][n], i, p);
                        membranes[l][n] = v;
                        next[n] = fire;
                    }
                }
                None => {
                    for (n, &i) in current.iter().enumerate() {
                        next[n] = i > 0;
                    }
                }
            }
            for (n, &f) in next.iter().enumerate() {
                if f {
                    out.push(SpikeRecord::new(t, l as u16, n as u32));
                }
            }
            spiked = next;
        }
    }
    SpikeTrace::for_model(model, out)
}

/// Random Bernoulli input followed by the reference forward pass.
pub fn generate_trace(model: &SnnModel, seed: u64, rate: f64) -> SpikeTrace {
    let input = random_input(model, seed, rate);
    lif_generate_trace(model, &input).expect("input built for this model")
}

/// Input current of every neuron of a layer, computed per target.
fn gather(
    kind: &LayerKind,
    inp: super::model::Dims,
    out: super::model::Dims,
    spiked: &[bool],
) -> Vec<i64> {
    let mut cur = vec![0i64; out.size() as usize];
    match kind {
        LayerKind::Fc {
            inputs, weights, ..
        } => {
            for (o, c) in cur.iter_mut().enumerate() {
                let row = &weights[o * *inputs as usize..(o + 1) * *inputs as usize];
                *c = row
                    .iter()
                    .zip(spiked)
                    .filter(|(_, &s)| s)
                    .map(|(&w, _)| w as i64)
                    .sum();
            }
        }
        LayerKind::Conv {
            in_channels,
            kernel,
            stride,
            padding,
            weights,
            ..
        } => {
            let k = *kernel as i64;
            for (o, c) in cur.iter_mut().enumerate() {
                let o = o as i64;
                let (oc, oy, ox) = (
                    o / (out.h * out.w) as i64,
                    (o / out.w as i64) % out.h as i64,
                    o % out.w as i64,
                );
                let mut acc = 0i64;
                for ic in 0..*in_channels as i64 {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = oy * *stride as i64 + ky - *padding as i64;
                            let ix = ox * *stride as i64 + kx - *padding as i64;
                            if iy < 0 || ix < 0 || iy >= inp.h as i64 || ix >= inp.w as i64 {
                                continue;
                            }
                            let src = (ic * inp.h as i64 + iy) * inp.w as i64 + ix;
                            if spiked[src as usize] {
                                let wi = ((oc * *in_channels as i64 + ic) * k + ky) * k + kx;
                                acc += weights[wi as usize] as i64;
                            }
                        }
                    }
                }
                *c = acc;
            }
        }
        LayerKind::MaxPool { kernel, stride } => {
            for (o, c) in cur.iter_mut().enumerate() {
                let o = o as u32;
                let (ch, oy, ox) = (o / (out.h * out.w), (o / out.w) % out.h, o % out.w);
                let any = (0..*kernel).any(|ky| {
                    (0..*kernel).any(|kx| spiked[inp.index(ch, oy * stride + ky, ox * stride + kx) as usize])
                });
                *c = any as i64;
            }
        }
    }
    cur
}
