#include <pybind11/functional.h>
#include <pybind11/stl.h>
#include <pybind11/pybind11.h>

#include "xkd/config.hpp"
#include "xkd/eval.hpp"
#include "xkd/numeric.hpp"
#include "xkd/objectives.hpp"
#include "xkd/oracle.hpp"
#include "xkd/verify.hpp"

namespace py = pybind11;
using namespace xkd;

namespace {

using Tokens = std::vector<TokenId>;

Sequence seq_of(const Tokens& t) { return Sequence{t}; }
Prompt prompt_of(const Tokens& t) { return Prompt{t}; }

py::dict breakdown(const LossBreakdown& l) {
  py::dict d;
  d["kd_term"] = l.kd_term;
  d["prior_kl_term"] = l.prior_kl_term;
  d["td_logdensity_term"] = l.td_logdensity_term;
  d["total"] = l.total;
  d["n_steps"] = l.n_steps;
  return d;
}

py::dict result(const LossResult& r) {
  py::dict d = breakdown(r.loss);
  d["grad_theta"] = r.grad_theta;
  d["grad_phi"] = r.grad_phi;
  return d;
}

std::vector<double> get_params(std::span<const double> p) { return {p.begin(), p.end()}; }

void set_params(std::span<double> p, const std::vector<double>& v) {
  if (v.size() != p.size())
    throw std::invalid_argument("expected " + std::to_string(p.size()) + " parameters, got " + std::to_string(v.size()));
  std::copy(v.begin(), v.end(), p.begin());
}

}  // namespace

PYBIND11_MODULE(_xkd, m) {
  m.doc() = "Experiential knowledge distillation on toy sequence tasks";

  py::register_exception<SupportViolation>(m, "SupportViolation", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<Vocab>(m, "Vocab")
      .def(py::init([](int size, TokenId bos, TokenId eos) {
             Vocab v{size, bos, eos};
             v.validate();
             return v;
           }),
           py::arg("size"), py::arg("bos_id") = 0, py::arg("eos_id") = 1)
      .def_readonly("size", &Vocab::size)
      .def_readonly("bos_id", &Vocab::bos_id)
      .def_readonly("eos_id", &Vocab::eos_id);

  py::class_<Policy>(m, "Policy")
      .def("dist", [](const Policy& p, const Tokens& ctx) { return p.dist_for_context(ctx).probs; }, py::arg("context"))
      .def_property_readonly("context_window", &Policy::context_window)
      .def_property_readonly("vocab", &Policy::vocab);

  py::class_<TabularPolicy, Policy>(m, "TabularPolicy")
      .def(py::init<Vocab, int>(), py::arg("vocab"), py::arg("context_window"))
      .def("set_row", &TabularPolicy::set_row, py::arg("context"), py::arg("weights"))
      .def_static("random", [](const Vocab& v, int k, std::uint64_t seed) {
        Rng rng(seed);
        return TabularPolicy::random(v, k, rng);
      }, py::arg("vocab"), py::arg("context_window"), py::arg("seed"));

  py::class_<NeuralPolicy, Policy>(m, "NeuralPolicy")
      .def(py::init<Vocab, int, int>(), py::arg("vocab"), py::arg("context_window"), py::arg("hidden"))
      .def_property("params", [](const NeuralPolicy& p) { return get_params(p.params()); },
                    [](NeuralPolicy& p, const std::vector<double>& v) { set_params(p.params(), v); })
      .def_property_readonly("hidden", &NeuralPolicy::hidden_size)
      .def_static("random", [](const Vocab& v, int k, int hidden, double std, std::uint64_t seed) {
        Rng rng(seed);
        return NeuralPolicy::random(v, k, hidden, std, rng);
      }, py::arg("vocab"), py::arg("context_window"), py::arg("hidden"), py::arg("std"), py::arg("seed"));

  py::class_<RewardPosterior>(m, "RewardPosterior")
      .def(py::init<Vocab, int>(), py::arg("vocab"), py::arg("context_window"))
      .def_property("params", [](const RewardPosterior& h) { return get_params(h.params()); },
                    [](RewardPosterior& h, const std::vector<double>& v) { set_params(h.params(), v); })
      .def_static("random", [](const Vocab& v, int k, double std, std::uint64_t seed) {
        Rng rng(seed);
        return RewardPosterior::random(v, k, std, rng);
      }, py::arg("vocab"), py::arg("context_window"), py::arg("std"), py::arg("seed"));

  py::class_<XKDConfig>(m, "XKDConfig")
      .def(py::init([](double lambda, double gamma, double alpha, double beta, double tau, double tau_prime,
                       const std::string& divergence, const std::string& view) {
             XKDConfig c;
             c.lambda = lambda;
             c.gamma = gamma;
             c.alpha = alpha;
             c.beta = beta;
             c.temps = {tau, tau_prime};
             c.divergence = divergence_mode_from_string(divergence);
             c.student_view = student_view_from_string(view);
             c.validate();
             return c;
           }),
           py::arg("lam") = 0.001, py::arg("gamma") = 1.0, py::arg("alpha") = 0.5, py::arg("beta") = 0.5,
           py::arg("tau") = 1.0, py::arg("tau_prime") = 1.0, py::arg("divergence") = "skew",
           py::arg("student_view") = "policy")
      .def_readonly("lam", &XKDConfig::lambda)
      .def_readonly("beta", &XKDConfig::beta);

  m.def("seq_logprob", [](const Policy& p, const Tokens& x, const Tokens& y) {
    return seq_logprob(p, prompt_of(x), seq_of(y));
  }, py::arg("policy"), py::arg("prompt"), py::arg("response"));
  m.def("sample", [](const Policy& p, const Tokens& x, double temperature, double top_p, int max_len,
                     std::uint64_t seed) {
    return sample(p, prompt_of(x), GenConfig{temperature, top_p, max_len, seed}).tokens;
  }, py::arg("policy"), py::arg("prompt"), py::arg("temperature") = 1.0, py::arg("top_p") = 1.0,
        py::arg("max_len") = 8, py::arg("seed") = 0);

  m.def("kl_tokens", [](const std::vector<double>& p, const std::vector<double>& q) {
    return kl_tokens(TokenDist{p}, TokenDist{q});
  });
  m.def("beta_skew_div", [](const std::vector<double>& p, const std::vector<double>& q, double beta) {
    return beta_skew_div(TokenDist{p}, TokenDist{q}, BetaWeight(beta));
  });
  m.def("mixture_jsd", [](const std::vector<double>& p, const std::vector<double>& q, double beta) {
    return mixture_jsd(TokenDist{p}, TokenDist{q}, BetaWeight(beta));
  });
  m.def("q_from_policy", [](const std::vector<double>& p, double tau_prime) {
    return q_from_policy(TokenDist{p}, tau_prime);
  }, py::arg("probs"), py::arg("tau_prime") = 1.0);
  m.def("boltzmann_policy", [](const std::vector<double>& q, double tau) { return boltzmann_policy(q, tau).probs; },
        py::arg("q"), py::arg("tau") = 1.0);
  m.def("kl_to_prior", [](double mu, double logvar) { return kl_to_prior(mu, logvar); });
  m.def("log_density", &log_density, py::arg("mu"), py::arg("logvar"), py::arg("value"));

  m.def("loss_seq", [](const NeuralPolicy& s, const Tokens& x, const Tokens& y, const XKDConfig& c) {
    return result(loss_seq(s, prompt_of(x), seq_of(y), c));
  });
  m.def("loss_ex", [](const NeuralPolicy& s, const RewardPosterior& h, const Tokens& x, const Tokens& y,
                      const XKDConfig& c) { return result(loss_ex(s, h, prompt_of(x), seq_of(y), c)); });
  m.def("loss_orm", [](const NeuralPolicy& s, const RewardPosterior& h, const Tokens& x, const Tokens& y,
                       const XKDConfig& c) { return result(loss_orm(s, h, prompt_of(x), seq_of(y), c)); });
  m.def("loss_gkd", [](const Policy& t, const NeuralPolicy& s, const Tokens& x, const Tokens& y, const XKDConfig& c) {
    return result(loss_gkd(t, s, prompt_of(x), seq_of(y), c));
  });
  m.def("loss_generalized_xkd", [](const Policy& t, const NeuralPolicy& s, const RewardPosterior& h, const Tokens& x,
                                   const Tokens& y, const XKDConfig& c) {
    return result(loss_generalized_xkd(t, s, h, prompt_of(x), seq_of(y), c));
  });
  m.def("loss_supervised_xkd", [](const Policy& t, const NeuralPolicy& s, const RewardPosterior& h, const Tokens& x,
                                  const Tokens& y, const XKDConfig& c) {
    return result(loss_supervised_xkd(t, s, h, prompt_of(x), seq_of(y), c));
  });

  m.def("enumerate_probs", [](const Policy& p, int max_len, const Tokens& x) {
    std::vector<std::pair<Tokens, double>> out;
    for (auto& w : enumerate_probs(p, EnumSpace{p.vocab(), max_len, prompt_of(x)})) out.emplace_back(w.seq.tokens, w.prob);
    return out;
  }, py::arg("policy"), py::arg("max_len"), py::arg("prompt"));
  m.def("exact_sequence_kl", [](const Policy& p, const Policy& q, int max_len, const Tokens& x) {
    return exact_sequence_kl(p, q, EnumSpace{p.vocab(), max_len, prompt_of(x)});
  });
  m.def("verify_seq_reform", [](const Policy& t, const Policy& a, const Policy& b, int max_len, const Tokens& x) {
    return verify_seq_reform(t, a, b, EnumSpace{t.vocab(), max_len, prompt_of(x)});
  });

  m.def("self_bleu", [](const std::vector<Tokens>& samples, int max_n) {
    std::vector<Sequence> s;
    for (const auto& t : samples) s.push_back(seq_of(t));
    return self_bleu(s, max_n);
  }, py::arg("samples"), py::arg("max_n") = 2);
  m.def("spearman", &spearman);

  m.def("verify", [](std::uint64_t seed, int instances) {
    std::vector<std::tuple<std::string, double, double>> out;
    for (const auto& r : run_verify_suite(seed, instances)) out.emplace_back(r.name, r.residual, r.tolerance);
    return out;
  }, py::arg("seed") = 0, py::arg("instances") = 10);

  m.def("run_experiment", [](const std::string& config, const std::vector<std::string>& overrides) {
    Settings s = parse_config(config, overrides);
    ExperimentResult r = [&] {
      py::gil_scoped_release release;
      return run_experiment(s.exp);
    }();
    py::dict d;
    d["kl_before"] = r.kl_before;
    d["kl_after"] = r.kl_after;
    d["performance"] = r.performance;
    std::vector<double> totals;
    for (const auto& step : r.report.log) totals.push_back(step.loss.total);
    d["loss"] = totals;
    d["student"] = r.student;
    return d;
  }, py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{});
}
