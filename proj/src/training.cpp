#include "snapstack/training.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace snapstack {

void LossConfig::validate(std::size_t class_count) const {
    if (class_weights.size() != class_count)
        throw std::invalid_argument("class weight count does not match class count");
    for (double w : class_weights)
        if (!(w > 0.0) || !std::isfinite(w))
            throw std::invalid_argument("class weights must be positive and finite");
}

Tensor one_hot(const std::vector<int>& labels, std::size_t class_count) {
    Tensor t = Tensor::zeros({labels.size(), class_count});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_count)
            throw std::invalid_argument("label out of range");
        t.data()[i * class_count + labels[i]] = 1.0;
    }
    return t;
}

LossResult weighted_cross_entropy(const Tensor& probs, const Tensor& target_onehot,
                                  const LossConfig& weights) {
    if (probs.rank() != 2 || !probs.same_shape(target_onehot))
        throw std::invalid_argument("loss wants matching [N,C] probabilities and targets");
    const std::size_t n = probs.extent(0), c = probs.extent(1);
    weights.validate(c);

    constexpr double kProbFloor = 1e-12;
    const double* pp = probs.data();
    const double* pt = target_onehot.data();

    Tensor grad = Tensor::zeros({n, c});
    double* pg = grad.data();
    double total = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);

    for (std::size_t i = 0; i < n; ++i) {
        int label = -1;
        for (std::size_t j = 0; j < c; ++j) {
            const double t = pt[i * c + j];
            if (t == 1.0) {
                if (label >= 0) throw std::invalid_argument("target row has multiple ones");
                label = static_cast<int>(j);
            } else if (t != 0.0) {
                throw std::invalid_argument("targets must be one-hot");
            }
        }
        if (label < 0) throw std::invalid_argument("target row has no class");
        const double w = weights.class_weights[label];
        const double p = std::max(pp[i * c + label], kProbFloor);
        total += w * -std::log(p);
        for (std::size_t j = 0; j < c; ++j)
            pg[i * c + j] = w * (pp[i * c + j] - pt[i * c + j]) * inv_n;
    }
    return {total * inv_n, std::move(grad)};
}

AdamOptimizer::AdamOptimizer(AdamConfig config) : config_(config) {}

void AdamOptimizer::step(std::vector<Network::ParamRef>& params) {
    if (m_.empty()) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const auto& p : params) {
            m_.push_back(Tensor::zeros(p.value->shape()));
            v_.push_back(Tensor::zeros(p.value->shape()));
        }
    }
    if (m_.size() != params.size())
        throw std::logic_error("optimizer bound to a different parameter list");

    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));

    for (std::size_t p = 0; p < params.size(); ++p) {
        if (!params[p].trainable) continue;
        if (!params[p].value->same_shape(*params[p].grad))
            throw std::invalid_argument("gradient shape mismatch for " + params[p].name);
        double* theta = params[p].value->data();
        const double* g = params[p].grad->data();
        double* m = m_[p].data();
        double* v = v_[p].data();
        const std::size_t n = params[p].value->size();
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(g[i])) {
                std::ostringstream msg;
                msg << "non-finite gradient in " << params[p].name << " at element " << i
                    << " on optimizer step " << t_;
                throw std::runtime_error(msg.str());
            }
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            theta[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
        }
    }
}

void TrainPlan::validate() const {
    if (total_iterations < 1) throw std::invalid_argument("total_iterations must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (checkpoint_fractions.empty())
        throw std::invalid_argument("plan needs at least one checkpoint fraction");
    double prev = 0.0;
    for (double f : checkpoint_fractions) {
        if (!(f > prev)) throw std::invalid_argument("checkpoint fractions must strictly increase");
        if (f > 1.0 + 1e-12) throw std::invalid_argument("checkpoint fractions must be <= 1");
        prev = f;
    }
    if (std::abs(checkpoint_fractions.back() - 1.0) > 1e-12)
        throw std::invalid_argument("last checkpoint fraction must be 1");
}

std::vector<std::uint64_t> TrainPlan::checkpoint_iterations() const {
    validate();
    std::vector<std::uint64_t> iters;
    for (double f : checkpoint_fractions) {
        const double scaled = f * static_cast<double>(total_iterations) + 1e-9;
        auto it = static_cast<std::uint64_t>(scaled);
        if (it < 1) it = 1;
        if (it > total_iterations) it = total_iterations;
        iters.push_back(it);
    }
    iters.back() = total_iterations;
    for (std::size_t i = 1; i < iters.size(); ++i)
        if (iters[i] <= iters[i - 1])
            throw std::invalid_argument("checkpoint schedule collapses at this iteration budget");
    return iters;
}

TrainResult train(const NetworkSpec& spec, const std::vector<TrainSample>& data,
                  const TrainPlan& plan, const LossConfig& loss, const SampleLoader& loader,
                  std::ostream* log) {
    plan.validate();
    loss.validate(spec.class_count);
    if (data.empty()) throw std::invalid_argument("training data is empty");

    // A positively weighted class with no samples almost surely means a
    // broken split; keep going but say so.
    {
        std::vector<std::size_t> counts(spec.class_count, 0);
        for (const auto& s : data) {
            if (s.label < 0 || static_cast<std::size_t>(s.label) >= spec.class_count)
                throw std::invalid_argument("training label out of range");
            ++counts[s.label];
        }
        for (std::size_t cls = 0; cls < counts.size(); ++cls)
            if (counts[cls] == 0 && loss.class_weights[cls] > 0.0)
                std::cerr << "warning: class " << cls
                          << " has weight " << loss.class_weights[cls]
                          << " but no training samples\n";
    }

    Network net = Network::create(spec, hash_combine(plan.seed, 0x696e6974ull /* "init" */));
    Rng dropout_rng(hash_combine(plan.seed, 0x64726f70ull /* "drop" */));
    Rng shuffle_rng(hash_combine(plan.seed, 0x73687566ull /* "shuf" */));

    AdamOptimizer opt(plan.adam);
    auto params = net.parameters();

    const auto schedule = plan.checkpoint_iterations();
    std::size_t next_ckpt = 0;
    TrainResult result;

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);
    std::size_t cursor = 0;
    std::uint64_t pass = 0;

    const std::size_t h = spec.input_shape[0], w = spec.input_shape[1],
                      c = spec.input_shape[2];
    const auto t0 = std::chrono::steady_clock::now();

    for (std::uint64_t iter = 1; iter <= plan.total_iterations; ++iter) {
        // Assemble the batch; reshuffle whenever a pass over the data ends.
        std::vector<std::size_t> batch_idx;
        batch_idx.reserve(plan.batch_size);
        std::vector<std::uint64_t> batch_pass;
        for (std::size_t b = 0; b < plan.batch_size; ++b) {
            if (cursor == order.size()) {
                ++pass;
                shuffle_rng.shuffle(order);
                cursor = 0;
            }
            batch_idx.push_back(order[cursor++]);
            batch_pass.push_back(pass);
        }

        Tensor batch = Tensor::zeros({plan.batch_size, h, w, c});
        std::vector<int> labels(plan.batch_size);
        const std::size_t stride = h * w * c;
        std::string load_error;  // exceptions must not unwind out of the omp region
#pragma omp parallel for schedule(dynamic)
        for (long long b = 0; b < static_cast<long long>(plan.batch_size); ++b) {
            const auto& sample = data[batch_idx[b]];
            try {
                Tensor img = loader(sample, batch_pass[b], batch_idx[b]);
                if (img.size() != stride)
                    throw std::invalid_argument("loader returned wrong image size for " +
                                                sample.key);
                std::copy(img.data(), img.data() + stride, batch.data() + b * stride);
            } catch (const std::exception& e) {
#pragma omp critical
                if (load_error.empty()) load_error = e.what();
            }
            labels[b] = sample.label;
        }
        if (!load_error.empty()) throw std::runtime_error(load_error);

        Tensor probs = net.forward(batch, Mode::Train, &dropout_rng);
        const LossResult lr = weighted_cross_entropy(probs, one_hot(labels, spec.class_count),
                                                     loss);
        if (!std::isfinite(lr.loss)) {
            std::ostringstream msg;
            msg << "non-finite loss (" << lr.loss << ") at iteration " << iter;
            throw std::runtime_error(msg.str());
        }

        net.zero_grads();
        net.backward(lr.grad_logits, /*from_logits=*/true);
        params = net.parameters();
        opt.step(params);
        net.state().trained_iterations = iter;
        result.final_loss = lr.loss;

        if (log) {
            const auto ms = std::chrono::duration<double, std::milli>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
            *log << "{\"iteration\":" << iter << ",\"loss\":" << lr.loss
                 << ",\"wall_ms\":" << ms << "}\n";
        }

        if (next_ckpt < schedule.size() && iter == schedule[next_ckpt]) {
            NetworkState snapshot = net.state();
            for (auto& l : snapshot.layers) l.cache.clear();
            result.checkpoints.push_back(std::move(snapshot));
            ++next_ckpt;
        }
    }
    return result;
}

}  // namespace snapstack
