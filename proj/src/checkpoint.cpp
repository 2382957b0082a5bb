#include "funfreeze/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "funfreeze/errors.hpp"

namespace funfreeze {

namespace {

std::string hexfloat(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

struct LineReader {
    std::istream& in;
    long line_no = 0;

    std::string next(const char* what) {
        std::string line;
        if (!std::getline(in, line)) {
            throw ParseError("checkpoint truncated: expected " + std::string(what) +
                             " after line " + std::to_string(line_no));
        }
        ++line_no;
        return line;
    }
};

long parse_count(std::istringstream& is, const char* what, long line_no) {
    long v = 0;
    if (!(is >> v) || v < 1) {
        throw ParseError("checkpoint line " + std::to_string(line_no) + ": bad " +
                         std::string(what));
    }
    return v;
}

void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
    out << "tensor " << name << " " << t.shape.size();
    for (std::size_t d : t.shape) out << " " << d;
    out << "\n";
    std::size_t row_len = t.shape.size() == 2 ? t.cols() : t.size();
    for (std::size_t i = 0; i < t.size(); ++i) {
        out << hexfloat(t.elems[i]) << (i % row_len == row_len - 1 ? "\n" : " ");
    }
}

Tensor read_tensor(LineReader& reader, const std::string& expect_name) {
    std::string header = reader.next("a tensor header");
    std::istringstream is(header);
    std::string tag, name;
    if (!(is >> tag >> name) || tag != "tensor") {
        throw ParseError("checkpoint line " + std::to_string(reader.line_no) +
                         ": expected a tensor header");
    }
    if (name != expect_name) {
        throw ParseError("checkpoint line " + std::to_string(reader.line_no) + ": expected tensor " +
                         expect_name + ", found " + name);
    }
    long rank = parse_count(is, "rank", reader.line_no);
    if (rank != 1 && rank != 2) {
        throw ParseError("checkpoint line " + std::to_string(reader.line_no) +
                         ": rank must be 1 or 2");
    }
    std::vector<std::size_t> shape;
    for (long i = 0; i < rank; ++i) {
        shape.push_back(static_cast<std::size_t>(parse_count(is, "dimension", reader.line_no)));
    }
    std::size_t total = 1;
    for (std::size_t d : shape) total *= d;
    std::size_t row_len = rank == 2 ? shape[1] : total;

    std::vector<double> elems;
    elems.reserve(total);
    while (elems.size() < total) {
        std::string line = reader.next("tensor values");
        std::istringstream vs(line);
        std::string tok;
        std::size_t in_row = 0;
        while (vs >> tok) {
            char* end = nullptr;
            double v = std::strtod(tok.c_str(), &end);
            if (end == tok.c_str() || *end != '\0') {
                throw ParseError("checkpoint line " + std::to_string(reader.line_no) +
                                 ": bad value '" + tok + "'");
            }
            elems.push_back(v);
            ++in_row;
        }
        if (in_row != row_len) {
            throw ParseError("checkpoint line " + std::to_string(reader.line_no) + ": expected " +
                             std::to_string(row_len) + " values, found " + std::to_string(in_row));
        }
    }
    return Tensor(std::move(shape), std::move(elems));
}

}  // namespace

void save_checkpoint(std::ostream& out, const AdapterStack& stack) {
    out << "funfreeze-checkpoint v1\n";
    out << "layers " << stack.layer_count() << " hidden " << stack.hidden() << " classes "
        << stack.classes() << " bottleneck " << stack.bottleneck() << "\n";
    for (const ParamRef& ref : all_params(stack)) {
        write_tensor(out, ref.name(), param_tensor(stack, ref));
    }
}

void save_checkpoint(const std::string& path, const AdapterStack& stack) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RunError("cannot open checkpoint for writing: " + path);
    save_checkpoint(out, stack);
    if (!out) throw RunError("write failed for checkpoint: " + path);
}

AdapterStack load_checkpoint(std::istream& in) {
    LineReader reader{in};
    if (reader.next("the format line") != "funfreeze-checkpoint v1") {
        throw ParseError("not a funfreeze checkpoint (bad format line)");
    }
    std::istringstream hdr(reader.next("the shape line"));
    std::string k1, k2, k3, k4;
    long layers = 0, hidden = 0, classes = 0, bottleneck = 0;
    if (!(hdr >> k1 >> layers >> k2 >> hidden >> k3 >> classes >> k4 >> bottleneck) ||
        k1 != "layers" || k2 != "hidden" || k3 != "classes" || k4 != "bottleneck" ||
        layers < 1 || hidden < 1 || classes < 2 || bottleneck < 1) {
        throw ParseError("checkpoint line 2: bad shape line");
    }

    std::size_t h = static_cast<std::size_t>(hidden);
    std::size_t r = static_cast<std::size_t>(bottleneck);
    AdapterStack stack;
    for (long l = 0; l < layers; ++l) {
        AdapterLayer layer;
        layer.base_weight = Tensor::zeros({h, h});
        layer.base_bias = Tensor::zeros({h});
        layer.norm_scale = Tensor::zeros({h});
        layer.norm_shift = Tensor::zeros({h});
        layer.down_weight = Tensor::zeros({h, r});
        layer.down_bias = Tensor::zeros({r});
        layer.up_weight = Tensor::zeros({r, h});
        layer.up_bias = Tensor::zeros({h});
        stack.layers.push_back(std::move(layer));
    }
    stack.head_weight = Tensor::zeros({static_cast<std::size_t>(classes), h});
    stack.head_bias = Tensor::zeros({static_cast<std::size_t>(classes)});

    for (const ParamRef& ref : all_params(stack)) {
        Tensor t = read_tensor(reader, ref.name());
        Tensor& dst = param_tensor(stack, ref);
        if (!t.same_shape(dst)) {
            throw ParseError("checkpoint tensor " + ref.name() + " has shape " + shape_str(t) +
                             ", expected " + shape_str(dst));
        }
        dst = std::move(t);
    }
    std::string extra;
    if (std::getline(in, extra) && !extra.empty()) {
        throw ParseError("checkpoint has trailing content after the last tensor");
    }
    return stack;
}

AdapterStack load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open checkpoint: " + path);
    return load_checkpoint(in);
}

}  // namespace funfreeze
