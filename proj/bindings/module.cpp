#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "refmatch/bank.hpp"
#include "refmatch/error.hpp"
#include "refmatch/fusion.hpp"
#include "refmatch/geometry.hpp"
#include "refmatch/metrics.hpp"
#include "refmatch/ot.hpp"
#include "refmatch/reward.hpp"
#include "refmatch/train.hpp"

namespace py = pybind11;
using namespace refmatch;

namespace {

Mask mask_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2) {
        throw py::value_error("mask must be a 2D array");
    }
    Mask mask;
    mask.height = static_cast<int>(arr.shape(0));
    mask.width = static_cast<int>(arr.shape(1));
    mask.values.assign(arr.data(), arr.data() + arr.size());
    return mask;
}

py::array_t<double> mask_to_array(const Mask& mask) {
    py::array_t<double> out({mask.height, mask.width});
    std::copy(mask.values.begin(), mask.values.end(), out.mutable_data());
    return out;
}

CostMatrix cost_from_array(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2) {
        throw py::value_error("cost matrix must be a 2D array");
    }
    CostMatrix cost;
    cost.rows = static_cast<int>(arr.shape(0));
    cost.cols = static_cast<int>(arr.shape(1));
    cost.data.assign(arr.data(), arr.data() + arr.size());
    return cost;
}

BBox bbox_from_tuple(const std::array<double, 4>& t) { return BBox{t[0], t[1], t[2], t[3]}; }

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Reference-based matching core: geometry metrics, entropic OT "
              "assignment, reward shaping and memory-attention fusion.";

    py::register_exception<Error>(m, "RefmatchError");

    py::class_<BBox>(m, "BBox")
        .def(py::init<double, double, double, double>(), py::arg("x"), py::arg("y"),
             py::arg("w"), py::arg("h"))
        .def_readwrite("x", &BBox::x)
        .def_readwrite("y", &BBox::y)
        .def_readwrite("w", &BBox::w)
        .def_readwrite("h", &BBox::h)
        .def("validate", &BBox::validate)
        .def("__repr__", [](const BBox& b) {
            return "BBox(" + std::to_string(b.x) + ", " + std::to_string(b.y) + ", " +
                   std::to_string(b.w) + ", " + std::to_string(b.h) + ")";
        });

    m.def("box_iou", &box_iou, py::arg("a"), py::arg("b"));
    m.def("box_giou", &box_giou, py::arg("a"), py::arg("b"));

    m.def(
        "mask_dice",
        [](const py::array_t<double>& pred, const py::array_t<double>& gt) {
            return mask_dice(mask_from_array(pred), mask_from_array(gt));
        },
        py::arg("pred"), py::arg("gt"));
    m.def(
        "mask_bce",
        [](const py::array_t<double>& pred, const py::array_t<double>& gt) {
            return mask_bce(mask_from_array(pred), mask_from_array(gt));
        },
        py::arg("pred"), py::arg("gt"));
    m.def(
        "mask_iou",
        [](const py::array_t<double>& a, const py::array_t<double>& b, double threshold) {
            return mask_iou(mask_from_array(a), mask_from_array(b), threshold);
        },
        py::arg("a"), py::arg("b"), py::arg("threshold") = 0.5);

    m.def(
        "average_precision",
        [](const std::vector<std::tuple<std::array<double, 4>, double, std::string>>& preds,
           const std::vector<std::tuple<std::array<double, 4>, std::string>>& gts,
           const std::vector<double>& thresholds) {
            std::vector<Detection> detections;
            for (const auto& [box, conf, label] : preds) {
                detections.push_back({bbox_from_tuple(box), conf, label});
            }
            std::vector<GroundTruthBox> gt_boxes;
            for (const auto& [box, label] : gts) {
                gt_boxes.push_back({bbox_from_tuple(box), label});
            }
            return average_precision(detections, gt_boxes, thresholds);
        },
        py::arg("preds"), py::arg("gts"), py::arg("iou_thresholds"));

    m.def(
        "cosine_similarity",
        [](const std::vector<double>& a, const std::vector<double>& b) {
            return cosine_similarity(FeatureVector{a}, FeatureVector{b});
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "sinkhorn",
        [](const py::array_t<double>& cost, double reg, double tol, int max_iter) {
            SinkhornConfig config{reg, tol, max_iter};
            TransportPlan plan = sinkhorn(cost_from_array(cost), config);
            py::array_t<double> entries({plan.n, plan.n});
            std::copy(plan.entries.begin(), plan.entries.end(), entries.mutable_data());
            py::dict out;
            out["plan"] = entries;
            out["converged"] = plan.converged;
            out["iterations"] = plan.iterations;
            out["marginal_error"] = plan.marginal_error;
            return out;
        },
        py::arg("cost"), py::arg("reg") = 0.05, py::arg("tol") = 1e-6,
        py::arg("max_iter") = 1000);

    m.def(
        "extract_assignment",
        [](const py::array_t<double>& plan_array) {
            CostMatrix as_matrix = cost_from_array(plan_array);
            if (as_matrix.rows != as_matrix.cols) {
                throw py::value_error("plan must be square");
            }
            TransportPlan plan;
            plan.n = as_matrix.rows;
            plan.entries = as_matrix.data;
            plan.row_marginal.assign(static_cast<std::size_t>(plan.n), 1.0 / plan.n);
            plan.col_marginal = plan.row_marginal;
            plan.converged = true;
            Assignment assignment = extract_assignment(plan);
            return py::make_tuple(assignment.pairs, assignment.confidences);
        },
        py::arg("plan"));

    m.def(
        "match",
        [](const std::vector<std::tuple<std::array<double, 4>>>& preds,
           const std::vector<std::tuple<std::array<double, 4>, std::string>>& prototypes,
           double reg, double tau_conf, double tau_cost_percentile) {
            std::vector<PredBox> pred_boxes;
            for (const auto& [box] : preds) pred_boxes.push_back({bbox_from_tuple(box), {}});
            std::vector<Prototype> protos;
            for (const auto& [box, label] : prototypes) {
                protos.push_back({label, bbox_from_tuple(box), {}});
            }
            MatchConfig config;
            config.sinkhorn.reg = reg;
            config.tau_conf = tau_conf;
            config.tau_cost_percentile = tau_cost_percentile;
            Assignment assignment = match_with_refinement(pred_boxes, protos, config);
            py::dict out;
            out["pairs"] = assignment.pairs;
            out["confidences"] = assignment.confidences;
            out["unassigned_labels"] = assignment.unassigned_labels;
            return out;
        },
        py::arg("preds"), py::arg("prototypes"), py::arg("reg") = 0.05,
        py::arg("tau_conf") = 0.5, py::arg("tau_cost_percentile") = 90.0);

    m.def(
        "parse_format",
        [](const std::string& raw, const std::vector<std::string>& label_set) {
            ParsedAnswer parsed = parse_format(raw, label_set);
            return py::make_tuple(parsed.valid,
                                  parsed.label ? py::object(py::cast(*parsed.label))
                                               : py::object(py::none()));
        },
        py::arg("raw"), py::arg("label_set"));

    auto reward_to_dict = [](const RewardResult& r) {
        py::dict out;
        out["total"] = r.total;
        out["components"] = r.components;
        out["valid_format"] = r.valid_format;
        return out;
    };

    m.def(
        "vqa_reward",
        [reward_to_dict](const std::optional<std::string>& predicted, const std::string& gold,
                         bool valid_format, double lambda_acc, double lambda_fmt) {
            RewardConfig config;
            config.lambda_acc = lambda_acc;
            config.lambda_fmt = lambda_fmt;
            return reward_to_dict(vqa_reward(predicted, gold, valid_format, config));
        },
        py::arg("predicted"), py::arg("gold"), py::arg("valid_format"),
        py::arg("lambda_acc") = 0.9, py::arg("lambda_fmt") = 0.1);

    m.def(
        "curriculum_thresholds",
        [](long step, int steps_per_stage) {
            RewardConfig config;
            config.curriculum.steps_per_stage = steps_per_stage;
            return curriculum_thresholds(step, config);
        },
        py::arg("step"), py::arg("steps_per_stage") = 100);

    m.def(
        "segmentation_reward",
        [reward_to_dict](const py::array_t<double>& pred, const py::array_t<double>& gt,
                         double w_bce, double w_dice) {
            RewardConfig config;
            config.w_bce = w_bce;
            config.w_dice = w_dice;
            return reward_to_dict(
                segmentation_reward(mask_from_array(pred), mask_from_array(gt), config));
        },
        py::arg("pred"), py::arg("gt"), py::arg("w_bce") = 0.7, py::arg("w_dice") = 0.3);

    m.def("group_advantages",
          [](const std::vector<double>& rewards) { return group_advantages(rewards); },
          py::arg("rewards"));

    m.def(
        "attend_memory",
        [](const std::vector<double>& q, const py::array_t<double>& slots) {
            auto arr = py::array_t<double, py::array::c_style | py::array::forcecast>(slots);
            if (arr.ndim() != 2) {
                throw py::value_error("slots must be a 2D array (n_slots x dim)");
            }
            MemoryBank bank;
            bank.dim = static_cast<int>(arr.shape(1));
            for (py::ssize_t j = 0; j < arr.shape(0); ++j) {
                MemorySlot slot;
                slot.values.assign(arr.data() + j * arr.shape(1),
                                   arr.data() + (j + 1) * arr.shape(1));
                bank.slots.push_back(std::move(slot));
            }
            FusedQuery fused = attend_memory(q, bank);
            return py::make_tuple(fused.alpha, fused.z);
        },
        py::arg("q"), py::arg("slots"));

    m.def(
        "decode_mask",
        [](const std::vector<double>& z, const py::array_t<double>& grid, double bias) {
            auto arr = py::array_t<double, py::array::c_style | py::array::forcecast>(grid);
            if (arr.ndim() != 3) {
                throw py::value_error("grid must be a 3D array (h x w x dim)");
            }
            FeatureGrid fg;
            fg.height = static_cast<int>(arr.shape(0));
            fg.width = static_cast<int>(arr.shape(1));
            fg.dim = static_cast<int>(arr.shape(2));
            fg.values.assign(arr.data(), arr.data() + arr.size());
            return mask_to_array(decode_mask(z, fg, bias));
        },
        py::arg("z"), py::arg("grid"), py::arg("bias") = 0.0);

    m.def(
        "lr_at",
        [](long step, long total_steps, double learning_rate, double warmup_fraction) {
            TrainConfig config;
            config.learning_rate = learning_rate;
            config.warmup_fraction = warmup_fraction;
            return lr_at(step, total_steps, config);
        },
        py::arg("step"), py::arg("total_steps"), py::arg("learning_rate") = 2e-4,
        py::arg("warmup_fraction") = 0.03);

#ifdef REFMATCH_VERSION
    m.attr("__version__") = REFMATCH_VERSION;
#else
    m.attr("__version__") = "dev";
#endif
}
