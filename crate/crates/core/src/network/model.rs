use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::network::{HeadOrdering, NetworkConfig};
use crate::nn::{ConvLayer, ConvShape, Graph, NodeId, ParamSet, Real, Tensor};
use crate::synthesis::RainMask;

/// Input transform followed by refinement rounds of parallel dilated paths.
#[derive(Clone, Debug, PartialEq)]
pub struct Extractor {
    pub input: ConvLayer,
    /// `rounds[r][p]` holds the two convolutions of path `p` in round `r`.
    pub rounds: Vec<Vec<[ConvLayer; 2]>>,
}

impl Extractor {
    pub fn register<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        cfg: &NetworkConfig,
        rounds: usize,
        rng: &mut R,
    ) -> Extractor {
        let c = cfg.feature_channels;
        let k = cfg.kernel_size;
        let shape = |in_channels, dilation| ConvShape {
            in_channels,
            out_channels: c,
            kernel: k,
            dilation,
        };
        let input = ConvLayer::register(params, "extractor.input", shape(cfg.input_channels, 1), 1.0, rng);
        let rounds = (0..rounds)
            .map(|r| {
                cfg.dilation_factors
                    .iter()
                    .enumerate()
                    .map(|(p, &d)| {
                        let prefix = format!("extractor.round{r}.path{p}");
                        let first = ConvLayer::register(params, &format!("{prefix}.conv1"), shape(c, d), 1.0, rng);
                        let second = ConvLayer::register(params, &format!("{prefix}.conv2"), shape(c, d), 0.5, rng);
                        [first, second]
                    })
                    .collect()
            })
            .collect();
        Extractor { input, rounds }
    }

    pub fn build<'p, T: Real>(&self, g: &mut Graph<'p, T>, image: NodeId) -> NodeId {
        let mut h = g.conv_relu(image, self.input);
        for round in &self.rounds {
            let mut terms = vec![h];
            for path in round {
                terms.push(Self::build_path(g, h, path));
            }
            h = g.add(&terms);
        }
        h
    }

    pub fn build_path<'p, T: Real>(g: &mut Graph<'p, T>, input: NodeId, path: &[ConvLayer; 2]) -> NodeId {
        let mid = g.conv_relu(input, path[0]);
        g.conv_relu(mid, path[1])
    }
}

/// Detection (two convolutions), streak and background heads.
#[derive(Clone, Debug, PartialEq)]
pub struct Heads {
    pub detect: [ConvLayer; 2],
    pub streak: ConvLayer,
    pub background: ConvLayer,
}

/// Graph nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct OutputNodes {
    pub features: NodeId,
    pub logits: NodeId,
    pub mask_prob: NodeId,
    pub streak: NodeId,
    pub background: NodeId,
}

/// Per-pixel predictions for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Two channels; channel 1 is "rain".
    pub detection_logits: Image,
    pub mask_prob: Image,
    pub streak: Image,
    pub background: Image,
}

impl Prediction {
    pub fn hard_mask(&self, threshold: f64) -> RainMask {
        let values: Vec<f64> = self
            .mask_prob
            .data()
            .iter()
            .map(|&p| if p >= threshold { 1.0 } else { 0.0 })
            .collect();
        RainMask::from_values(self.mask_prob.height(), self.mask_prob.width(), &values).expect("binary values")
    }
}

/// The joint detection and removal network.
#[derive(Clone, Debug, PartialEq)]
pub struct JorderNet<T: Real> {
    config: NetworkConfig,
    extractor: Extractor,
    heads: Heads,
    params: ParamSet<T>,
}

impl<T: Real> JorderNet<T> {
    /// Freshly initialised network. The streak head starts at zero and the
    /// background head as `O − R̂·Ŝ`, so a fresh network returns its input.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let extractor = Extractor::register(&mut params, &config, config.intra_recurrences, &mut rng);
        let c = config.feature_channels;
        let k = config.kernel_size;
        let shape = |in_channels, out_channels| ConvShape {
            in_channels,
            out_channels,
            kernel: k,
            dilation: 1,
        };
        let (detect_in, streak_in) = match config.head_ordering {
            HeadOrdering::RSB => (c, c + 1),
            HeadOrdering::SRB => (c + 1, c),
            HeadOrdering::Parallel => (c, c),
        };
        let detect = [
            ConvLayer::register(&mut params, "detect.conv1", shape(detect_in, c), 1.0, &mut rng),
            ConvLayer::register(&mut params, "detect.conv2", shape(c, 2), 0.1, &mut rng),
        ];
        let streak = ConvLayer::register(&mut params, "streak", shape(streak_in, 1), 0.0, &mut rng);
        let background = ConvLayer::register(&mut params, "background", shape(c + 2 + config.input_channels, config.input_channels), 0.0, &mut rng);
        let residual = c + 2..c + 2 + config.input_channels;
        for (out, input) in residual.enumerate() {
            background.set_identity_tap(&mut params, out, input);
        }
        Ok(JorderNet {
            config,
            extractor,
            heads: Heads {
                detect,
                streak,
                background,
            },
            params,
        })
    }

    /// Rebuilds a network around existing parameter values, checking every
    /// name and shape against `config`.
    pub fn from_params(config: NetworkConfig, params: &ParamSet<T>) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        net.params.load_from(params)?;
        if !net.params.all_finite() {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn extractor(&self) -> &Extractor {
        &self.extractor
    }

    pub fn heads(&self) -> &Heads {
        &self.heads
    }

    pub fn cast<U: Real>(&self) -> JorderNet<U> {
        JorderNet {
            config: self.config.clone(),
            extractor: self.extractor.clone(),
            heads: self.heads.clone(),
            params: self.params.cast(),
        }
    }

    pub(crate) fn check_input(&self, image: &Image) -> Result<()> {
        if image.channels() != self.config.input_channels {
            return Err(Error::Shape(format!(
                "network expects {} channels, got {}",
                self.config.input_channels,
                image.channels()
            )));
        }
        if image.height() == 0 || image.width() == 0 {
            return Err(Error::Shape("empty image".into()));
        }
        if !image.is_finite() {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    pub fn build_graph<'p>(&self, g: &mut Graph<'p, T>, rain: NodeId) -> OutputNodes {
        let features = self.extractor.build(g, rain);
        let [d1, d2] = self.heads.detect;
        let detect = |g: &mut Graph<'p, T>, input: NodeId| {
            let hidden = g.conv_relu(input, d1);
            g.conv(hidden, d2)
        };
        let (logits, mask_prob, streak) = match self.config.head_ordering {
            HeadOrdering::RSB => {
                let logits = detect(g, features);
                let prob = g.softmax_prob(logits);
                let cat = g.concat(&[features, prob]);
                (logits, prob, g.conv(cat, self.heads.streak))
            }
            HeadOrdering::SRB => {
                let streak = g.conv(features, self.heads.streak);
                let cat = g.concat(&[features, streak]);
                let logits = detect(g, cat);
                (logits, g.softmax_prob(logits), streak)
            }
            HeadOrdering::Parallel => {
                let logits = detect(g, features);
                (logits, g.softmax_prob(logits), g.conv(features, self.heads.streak))
            }
        };
        let rain_part = g.mul(mask_prob, streak);
        let residual = g.sub_broadcast(rain, rain_part);
        let cat = g.concat(&[features, mask_prob, streak, residual]);
        let background = g.conv(cat, self.heads.background);
        OutputNodes {
            features,
            logits,
            mask_prob,
            streak,
            background,
        }
    }

    pub fn forward(&self, image: &Image) -> Result<Prediction> {
        self.check_input(image)?;
        let mut g = Graph::new(&self.params);
        let x = g.input(Tensor::from_image(image));
        let out = self.build_graph(&mut g, x);
        Ok(Prediction {
            detection_logits: g.value(out.logits).to_image(),
            mask_prob: g.value(out.mask_prob).to_image(),
            streak: g.value(out.streak).to_image(),
            background: g.value(out.background).to_image(),
        })
    }

    /// ReLU on/off pattern of a full forward pass.
    pub fn relu_pattern(&self, image: &Image) -> Result<Vec<bool>> {
        self.check_input(image)?;
        let mut g = Graph::new(&self.params);
        let x = g.input(Tensor::from_image(image));
        self.build_graph(&mut g, x);
        Ok(g.relu_pattern())
    }

    /// Output of the feature extractor, `C×H×W`.
    pub fn extract_features(&self, image: &Image) -> Result<Tensor<T>> {
        self.check_input(image)?;
        let mut g = Graph::new(&self.params);
        let x = g.input(Tensor::from_image(image));
        let f = self.extractor.build(&mut g, x);
        Ok(g.value(f).clone())
    }

    /// Output of the input transform alone.
    pub fn input_transform(&self, image: &Image) -> Result<Tensor<T>> {
        self.check_input(image)?;
        let mut g = Graph::new(&self.params);
        let x = g.input(Tensor::from_image(image));
        let f = g.conv_relu(x, self.extractor.input);
        Ok(g.value(f).clone())
    }

    /// Runs one dilated path of one refinement round on a feature map.
    pub fn path_output(&self, round: usize, path: usize, features: &Tensor<T>) -> Result<Tensor<T>> {
        let layers = self
            .extractor
            .rounds
            .get(round)
            .and_then(|r| r.get(path))
            .ok_or_else(|| Error::Parameter(format!("no path {path} in round {round}")))?;
        if features.channels != self.config.feature_channels {
            return Err(Error::Shape(format!(
                "path expects {} channels, got {}",
                self.config.feature_channels, features.channels
            )));
        }
        let mut g = Graph::new(&self.params);
        let x = g.input(features.clone());
        let y = Extractor::build_path(&mut g, x, layers);
        Ok(g.value(y).clone())
    }
}

/// Bounding box (inclusive) of the pixels where two maps differ in any
/// channel by more than `tolerance`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Footprint {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl Footprint {
    pub fn height(&self) -> usize {
        self.bottom - self.top + 1
    }

    pub fn width(&self) -> usize {
        self.right - self.left + 1
    }
}

pub fn perturbation_footprint<T: Real>(before: &Tensor<T>, after: &Tensor<T>, tolerance: f64) -> Option<Footprint> {
    assert!(before.same_spatial(after) && before.channels == after.channels);
    let w = before.width;
    let n = before.plane_len();
    let mut fp: Option<Footprint> = None;
    for (i, (a, b)) in before.data.iter().zip(&after.data).enumerate() {
        if (a.as_f64() - b.as_f64()).abs() <= tolerance {
            continue;
        }
        let (y, x) = ((i % n) / w, i % w);
        fp = Some(match fp {
            None => Footprint {
                top: y,
                left: x,
                bottom: y,
                right: x,
            },
            Some(f) => Footprint {
                top: f.top.min(y),
                left: f.left.min(x),
                bottom: f.bottom.max(y),
                right: f.right.max(x),
            },
        });
    }
    fp
}
