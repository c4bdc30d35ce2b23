#include "snapstack/stacking.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "snapstack/wire.hpp"

namespace snapstack {

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

StackFeatures collect_features(std::vector<Network*> sub_models,
                               const std::vector<Tensor>& images,
                               const std::vector<int>& labels) {
    if (sub_models.size() != 5)
        throw std::invalid_argument("stacking expects exactly five sub-models, got " +
                                    std::to_string(sub_models.size()));
    if (images.empty()) throw std::invalid_argument("empty validation set");
    if (labels.size() != images.size())
        throw std::invalid_argument("label count does not match image count");

    const std::size_t class_count = sub_models.front()->spec().class_count;
    for (const Network* net : sub_models)
        if (net->spec().class_count != class_count)
            throw std::invalid_argument("sub-models disagree on class count");

    const std::size_t m = images.size();
    const std::size_t width = sub_models.size() * class_count;
    Tensor features = Tensor::zeros({m, width});

    // Batched inference per sub-model, chunked to bound activation memory.
    constexpr std::size_t kChunk = 64;
    const auto& shape = images.front().shape();
    for (std::size_t start = 0; start < m; start += kChunk) {
        const std::size_t count = std::min(kChunk, m - start);
        Tensor batch = Tensor::zeros({count, shape[0], shape[1], shape[2]});
        const std::size_t stride = shape[0] * shape[1] * shape[2];
        for (std::size_t i = 0; i < count; ++i) {
            if (images[start + i].shape() != shape)
                throw std::invalid_argument("validation images disagree on shape");
            std::copy(images[start + i].data(), images[start + i].data() + stride,
                      batch.data() + i * stride);
        }
        for (std::size_t j = 0; j < sub_models.size(); ++j) {
            Tensor probs = sub_models[j]->predict_probs(batch);
            for (std::size_t i = 0; i < count; ++i)
                for (std::size_t cls = 0; cls < class_count; ++cls)
                    features.data()[(start + i) * width + j * class_count + cls] =
                        probs.data()[i * class_count + cls];
        }
    }

    StackFeatures out;
    out.matrix = std::move(features);
    out.labels = labels;
    out.class_count = class_count;
    return out;
}

namespace {

// Mean binary cross-entropy + (lambda/2)*||w||^2 (intercept excluded) and
// its gradient, in the overflow-safe softplus form.
double objective_and_grad(const Tensor& x, const std::vector<int>& labels, int positive_class,
                          double lambda, const std::vector<double>& theta,
                          std::vector<double>* grad) {
    const std::size_t m = x.extent(0), d = x.extent(1);
    const double* px = x.data();
    const double inv_m = 1.0 / static_cast<double>(m);

    if (grad) grad->assign(d + 1, 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        double s = theta[0];
        for (std::size_t j = 0; j < d; ++j) s += theta[j + 1] * px[i * d + j];
        const double y = labels[i] == positive_class ? 1.0 : 0.0;
        loss += std::max(s, 0.0) - y * s + std::log1p(std::exp(-std::abs(s)));
        if (grad) {
            const double delta = (sigmoid(s) - y) * inv_m;
            (*grad)[0] += delta;
            for (std::size_t j = 0; j < d; ++j) (*grad)[j + 1] += delta * px[i * d + j];
        }
    }
    loss *= inv_m;
    for (std::size_t j = 1; j <= d; ++j) {
        loss += 0.5 * lambda * theta[j] * theta[j];
        if (grad) (*grad)[j] += lambda * theta[j];
    }
    return loss;
}

}  // namespace

StackedModel fit_stacker(const StackFeatures& features, double lambda,
                         const FitOptions& options) {
    if (lambda < 0.0 || !std::isfinite(lambda))
        throw std::invalid_argument("lambda must be non-negative");
    const std::size_t m = features.matrix.extent(0);
    const std::size_t d = features.matrix.extent(1);
    if (features.labels.size() != m)
        throw std::invalid_argument("feature/label row counts disagree");
    const std::size_t c = features.class_count;
    if (c < 2) throw std::invalid_argument("stacker needs at least two classes");

    std::vector<std::size_t> counts(c, 0);
    for (int l : features.labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= c)
            throw std::invalid_argument("stack feature label out of range");
        ++counts[l];
    }
    for (std::size_t cls = 0; cls < c; ++cls)
        if (counts[cls] == 0)
            throw std::invalid_argument("degenerate stacker input: class " +
                                        std::to_string(cls) + " has no samples");

    StackedModel model;
    model.class_count = c;
    model.feature_width = d;
    model.lambda = lambda;
    model.theta.resize(c);

    for (std::size_t cls = 0; cls < c; ++cls) {
        std::vector<double> theta(d + 1, 0.0);
        std::vector<double> grad;
        double loss = objective_and_grad(features.matrix, features.labels,
                                         static_cast<int>(cls), lambda, theta, &grad);
        bool converged = false;
        double grad_norm = 0.0;
        for (std::size_t it = 0; it < options.max_iterations; ++it) {
            double norm2 = 0.0;
            for (double g : grad) norm2 += g * g;
            grad_norm = std::sqrt(norm2);
            if (grad_norm <= options.tolerance) {
                converged = true;
                break;
            }
            // Backtracking line search on the descent direction -grad.
            double step = 1.0;
            std::vector<double> trial(theta.size());
            for (;;) {
                for (std::size_t j = 0; j < theta.size(); ++j)
                    trial[j] = theta[j] - step * grad[j];
                const double trial_loss = objective_and_grad(
                    features.matrix, features.labels, static_cast<int>(cls), lambda, trial,
                    nullptr);
                if (trial_loss <= loss - 0.5 * step * norm2 || step < 1e-18) break;
                step *= 0.5;
            }
            theta = trial;
            loss = objective_and_grad(features.matrix, features.labels, static_cast<int>(cls),
                                      lambda, theta, &grad);
        }
        if (!converged) {
            std::ostringstream msg;
            msg << "stacker fit for class " << cls << " did not converge within "
                << options.max_iterations << " iterations (gradient norm " << grad_norm << ")";
            throw std::runtime_error(msg.str());
        }
        model.theta[cls] = Tensor::from({d + 1}, std::move(theta));
    }
    return model;
}

double stacked_score(const StackedModel& model, std::span<const double> feature_row,
                     std::size_t cls) {
    if (!model.fitted()) throw std::logic_error("stacked model is not fitted");
    if (cls >= model.class_count) throw std::invalid_argument("class index out of range");
    if (feature_row.size() != model.feature_width)
        throw std::invalid_argument("feature row width mismatch");
    const double* th = model.theta[cls].data();
    double s = th[0];
    for (std::size_t j = 0; j < feature_row.size(); ++j) s += th[j + 1] * feature_row[j];
    return sigmoid(s);
}

Classification classify(const StackedModel& model, std::vector<Network*> sub_models,
                        const Tensor& image) {
    if (!model.fitted()) throw std::logic_error("stacked model is not fitted");
    if (image.rank() != 3) throw std::invalid_argument("classify wants one [H,W,C] image");

    StackFeatures f = collect_features(std::move(sub_models),
                                       std::vector<Tensor>{image}, std::vector<int>{0});
    if (f.matrix.extent(1) != model.feature_width)
        throw std::invalid_argument("sub-model feature width does not match the model");

    Classification result;
    result.scores.resize(model.class_count);
    std::span<const double> row(f.matrix.data(), model.feature_width);
    for (std::size_t cls = 0; cls < model.class_count; ++cls)
        result.scores[cls] = stacked_score(model, row, cls);
    result.predicted = 0;
    for (std::size_t cls = 1; cls < model.class_count; ++cls)
        if (result.scores[cls] > result.scores[result.predicted])
            result.predicted = static_cast<int>(cls);
    return result;
}

namespace {
constexpr std::uint64_t kStackedModelVersion = 1;
}

void StackedModel::save(const std::string& path) const {
    if (!fitted()) throw std::logic_error("refusing to save an unfitted stacked model");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open stacked model for writing: " + path);
    wire::put_u64(os, kStackedModelVersion);
    wire::put_u64(os, class_count);
    wire::put_u64(os, feature_width);
    wire::put_f64(os, lambda);
    for (const auto& t : theta) t.write(os);
    if (!os) throw std::runtime_error("failed writing stacked model: " + path);
}

StackedModel StackedModel::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open stacked model: " + path);
    const auto version = wire::get_u64(is, "stacked model version");
    if (version != kStackedModelVersion)
        throw std::runtime_error("unsupported stacked model version in " + path);
    StackedModel model;
    model.class_count = wire::get_u64(is, "class count");
    model.feature_width = wire::get_u64(is, "feature width");
    model.lambda = wire::get_f64(is, "lambda");
    model.theta.resize(model.class_count);
    for (auto& t : model.theta) {
        t = Tensor::read(is);
        if (t.rank() != 1 || t.extent(0) != model.feature_width + 1)
            throw std::runtime_error("stacked model tensor shape mismatch in " + path);
    }
    if (is.peek() != std::istream::traits_type::eof())
        throw std::runtime_error("trailing bytes after stacked model payload: " + path);
    return model;
}

}  // namespace snapstack
